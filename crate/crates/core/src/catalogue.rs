//! Enterprise tool catalogue: loading, validation and per-tool required-argument sets.
//!
//! On disk a catalogue is a JSON array of tool objects:
//!
//! ```json
//! [{"name": "t", "description": "...",
//!   "parameters": {"p": {"type": "string", "description": "...", "required": true}}}]
//! ```
//!
//! Parameter order is preserved exactly as written so prompt rendering is reproducible.
//! Unknown extra fields on tools and parameters are kept (and written back out) but otherwise ignored.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CatalogueError {
    #[error("failed to read catalogue {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalogue JSON: {0}")]
    Parse(String),
    #[error("catalogue schema error: {0}")]
    Schema(String),
    #[error("duplicate tool name `{0}`")]
    DuplicateName(String),
    #[error("catalogue must contain at least one tool")]
    Empty,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
}

/// JSON type tag of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }

    /// Whether a JSON value is an instance of this type tag.
    pub fn admits(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Array => value.is_array(),
            ParamType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub type_tag: ParamType,
    pub description: String,
    #[serde(default)]
    pub required: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ParamSpec {
    pub fn new(type_tag: ParamType, description: impl Into<String>, required: bool) -> Self {
        Self {
            type_tag,
            description: description.into(),
            required,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub description: String,
    #[serde(rename = "parameters", deserialize_with = "unique_params")]
    pub params: IndexMap<String, ParamSpec>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Tool {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params: IndexMap::new(),
            extra: Map::new(),
        }
    }

    pub fn with_param(mut self, name: impl Into<String>, spec: ParamSpec) -> Self {
        self.params.insert(name.into(), spec);
        self
    }

    /// Names of the parameters flagged as required, in catalogue order.
    pub fn required_args(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|(_, spec)| spec.required)
            .map(|(name, _)| name.as_str())
            .collect()
    }

    fn validate(&self) -> Result<(), CatalogueError> {
        if self.name.trim().is_empty() {
            return Err(CatalogueError::Schema("tool name must be non-empty".into()));
        }
        for (pname, spec) in &self.params {
            if pname.is_empty() {
                return Err(CatalogueError::Schema(format!(
                    "tool `{}` has an empty parameter name",
                    self.name
                )));
            }
            if spec.description.trim().is_empty() {
                return Err(CatalogueError::Schema(format!(
                    "parameter `{pname}` of tool `{}` has an empty description",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Render in the `{"name", "description", "parameters"}` shape used inside prompts.
    /// Vendor extension fields are left out.
    pub fn prompt_json(&self) -> Value {
        let mut params = Map::new();
        for (pname, spec) in &self.params {
            let mut p = Map::new();
            p.insert("description".into(), Value::String(spec.description.clone()));
            p.insert("type".into(), Value::String(spec.type_tag.as_str().into()));
            p.insert("required".into(), Value::Bool(spec.required));
            params.insert(pname.clone(), Value::Object(p));
        }
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("description".into(), Value::String(self.description.clone()));
        obj.insert("parameters".into(), Value::Object(params));
        Value::Object(obj)
    }
}

/// Convenience wrapper matching the free-function form used elsewhere.
pub fn required_args(tool: &Tool) -> Vec<&str> {
    tool.required_args()
}

fn unique_params<'de, D>(deserializer: D) -> Result<IndexMap<String, ParamSpec>, D::Error>
where
    D: Deserializer<'de>,
{
    struct ParamsVisitor;

    impl<'de> Visitor<'de> for ParamsVisitor {
        type Value = IndexMap<String, ParamSpec>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map of parameter name to parameter spec")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = IndexMap::new();
            while let Some((key, spec)) = map.next_entry::<String, ParamSpec>()? {
                if out.contains_key(&key) {
                    return Err(serde::de::Error::custom(format!(
                        "duplicate parameter name `{key}`"
                    )));
                }
                out.insert(key, spec);
            }
            Ok(out)
        }
    }

    deserializer.deserialize_map(ParamsVisitor)
}

/// An immutable, validated set of tools indexed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalogue {
    tools: Vec<Tool>,
    index: HashMap<String, usize>,
}

impl Catalogue {
    pub fn from_tools(tools: Vec<Tool>) -> Result<Self, CatalogueError> {
        if tools.is_empty() {
            return Err(CatalogueError::Empty);
        }
        let mut index = HashMap::with_capacity(tools.len());
        for (pos, tool) in tools.iter().enumerate() {
            tool.validate()?;
            if index.insert(tool.name.clone(), pos).is_some() {
                return Err(CatalogueError::DuplicateName(tool.name.clone()));
            }
        }
        Ok(Self { tools, index })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogueError> {
        let tools: Vec<Tool> = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => CatalogueError::Schema(e.to_string()),
            _ => CatalogueError::Parse(e.to_string()),
        })?;
        Self::from_tools(tools)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogueError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CatalogueError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.tools).expect("tools serialize")
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn tools(&self) -> &[Tool] {
        &self.tools
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tool> {
        self.tools.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.position(name).map(|i| &self.tools[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tool, CatalogueError> {
        self.get(name)
            .ok_or_else(|| CatalogueError::UnknownTool(name.to_string()))
    }
}

/// Load a catalogue from disk; the error (if any) is the lint finding.
pub fn load_catalogue(path: impl AsRef<Path>) -> Result<Catalogue, CatalogueError> {
    Catalogue::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const FN_1126: &str = r#"[{
        "name": "fn_1126_cloud_transport_management",
        "description": "Retrieve the action log of a transport request on a transport node.",
        "parameters": {
            "nodeId": {"type": "integer", "description": "Identifier of the transport node", "required": true},
            "transportRequestId": {"type": "integer", "description": "Identifier of the transport request", "required": true}
        }
    }]"#;

    #[test]
    fn loads_single_tool() {
        let cat = Catalogue::from_json_str(FN_1126).unwrap();
        assert_eq!(cat.len(), 1);
        let tool = cat.get("fn_1126_cloud_transport_management").unwrap();
        assert_eq!(tool.required_args(), vec!["nodeId", "transportRequestId"]);
    }

    #[test]
    fn empty_array_rejected() {
        assert!(matches!(
            Catalogue::from_json_str("[]"),
            Err(CatalogueError::Empty)
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let text = r#"[{"name":"a","description":"x","parameters":{}},
                       {"name":"a","description":"y","parameters":{}}]"#;
        assert!(matches!(
            Catalogue::from_json_str(text),
            Err(CatalogueError::DuplicateName(n)) if n == "a"
        ));
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let text = r#"[{"name":"a","description":"x","parameters":{
            "p":{"type":"string","description":"d","required":true},
            "p":{"type":"string","description":"d","required":false}}}]"#;
        assert!(matches!(
            Catalogue::from_json_str(text),
            Err(CatalogueError::Schema(_))
        ));
    }

    #[test]
    fn malformed_and_schema_errors_are_distinct() {
        assert!(matches!(
            Catalogue::from_json_str("[{"),
            Err(CatalogueError::Parse(_))
        ));
        let missing = r#"[{"name":"a","parameters":{}}]"#;
        assert!(matches!(
            Catalogue::from_json_str(missing),
            Err(CatalogueError::Schema(_))
        ));
        let bad_type = r#"[{"name":"a","description":"x","parameters":{
            "p":{"type":"date","description":"d","required":true}}}]"#;
        assert!(matches!(
            Catalogue::from_json_str(bad_type),
            Err(CatalogueError::Schema(_))
        ));
    }

    #[test]
    fn required_args_filters_flags() {
        let tool = Tool::new("t", "d")
            .with_param("a", ParamSpec::new(ParamType::String, "A", true))
            .with_param("b", ParamSpec::new(ParamType::String, "B", false));
        assert_eq!(tool.required_args(), vec!["a"]);
        assert!(Tool::new("t", "d").required_args().is_empty());
    }

    #[test]
    fn extra_fields_preserved_and_order_kept() {
        let text = r#"[{"name":"a","description":"x","x-vendor":{"k":1},"parameters":{
            "zeta":{"type":"string","description":"z","required":true,"format":"uuid"},
            "alpha":{"type":"boolean","description":"a"}}}]"#;
        let cat = Catalogue::from_json_str(text).unwrap();
        let tool = cat.get("a").unwrap();
        assert_eq!(tool.extra["x-vendor"], serde_json::json!({"k": 1}));
        let names: Vec<_> = tool.params.keys().cloned().collect();
        assert_eq!(names, vec!["zeta", "alpha"]);
        assert_eq!(tool.params["zeta"].extra["format"], "uuid");
        assert!(!tool.params["alpha"].required);
        let again = Catalogue::from_json_str(&cat.to_json_string()).unwrap();
        assert_eq!(again, cat);
    }

    fn arb_tool() -> impl Strategy<Value = Tool> {
        let ptype = prop_oneof![
            Just(ParamType::String),
            Just(ParamType::Integer),
            Just(ParamType::Number),
            Just(ParamType::Boolean),
            Just(ParamType::Array),
            Just(ParamType::Object),
        ];
        (
            "[a-z][a-z0-9_]{0,12}",
            "[A-Za-z ]{1,30}",
            proptest::collection::vec(("[a-zA-Z]{1,8}", ptype, "[a-z ]{1,10}", any::<bool>()), 0..5),
        )
            .prop_map(|(name, desc, params)| {
                let mut tool = Tool::new(name, desc);
                for (pname, t, pdesc, req) in params {
                    tool.params.insert(pname, ParamSpec::new(t, format!("d {pdesc}"), req));
                }
                tool
            })
    }

    proptest! {
        #[test]
        fn serialize_roundtrip(tools in proptest::collection::vec(arb_tool(), 1..6)) {
            let mut seen = std::collections::HashSet::new();
            let tools: Vec<Tool> = tools.into_iter().filter(|t| seen.insert(t.name.clone())).collect();
            let cat = Catalogue::from_tools(tools).unwrap();
            let text = cat.to_json_string();
            let again = Catalogue::from_json_str(&text).unwrap();
            prop_assert_eq!(&again, &cat);
            prop_assert_eq!(again.to_json_string(), text);
            for tool in cat.iter() {
                for r in tool.required_args() {
                    prop_assert!(tool.params.contains_key(r));
                }
            }
        }
    }
}
