//! Scenario sampling: persona, goal, distractors, candidate pool and gold argument values
//! for one seed tool.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::ArgMap;
use crate::catalogue::{Catalogue, CatalogueError, Tool};
use crate::embed::{dot, EmbedError, Embedder};
use crate::gateway::{ChatMessage, GatewayError, LlmClient};
use crate::prompts::{self, render_tool};
use crate::retrieval::{candidate_pool, tool_text, DistractorSet, RetrievalError, ToolIndex};
use crate::seeds;
use crate::text::{contains_word, parse_json_reply};

/// Regeneration cap for goal and slot generation.
pub const MAX_ATTEMPTS: usize = 3;
pub const DEFAULT_PERSONA_K: usize = 10;
pub const DEFAULT_K: usize = 5;

const BUNDLED_PERSONAS: &str = include_str!("../assets/personas.json");

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("persona store: {0}")]
    Personas(String),
    #[error("goal leaked `{leaked}` in all {attempts} attempts (last: {last:?})")]
    GoalLeak { attempts: usize, leaked: String, last: String },
    #[error("slot values for `{tool}` rejected in all {attempts} attempts: {reason}")]
    SlotMismatch { tool: String, attempts: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
}

pub struct PersonaStore {
    personas: Vec<String>,
    vectors: Vec<Vec<f64>>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for PersonaStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PersonaStore")
            .field("personas", &self.personas.len())
            .field("embedder", &self.embedder.id())
            .finish()
    }
}

impl PersonaStore {
    pub fn new(personas: Vec<String>, embedder: Arc<dyn Embedder>) -> Result<Self, ScenarioError> {
        if personas.is_empty() {
            return Err(ScenarioError::Personas("store must hold at least one persona".into()));
        }
        if let Some(i) = personas.iter().position(|p| p.trim().is_empty()) {
            return Err(ScenarioError::Personas(format!("persona #{i} is empty")));
        }
        let vectors = personas
            .iter()
            .map(|p| embedder.embed(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { personas, vectors, embedder })
    }

    /// Read a JSON array of strings.
    pub fn load(path: impl AsRef<Path>, embedder: Arc<dyn Embedder>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Personas(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text, embedder)
    }

    pub fn from_json_str(text: &str, embedder: Arc<dyn Embedder>) -> Result<Self, ScenarioError> {
        let personas: Vec<String> =
            serde_json::from_str(text).map_err(|e| ScenarioError::Personas(e.to_string()))?;
        Self::new(personas, embedder)
    }

    /// The small sample shipped with the crate.
    pub fn bundled(embedder: Arc<dyn Embedder>) -> Result<Self, ScenarioError> {
        Self::from_json_str(BUNDLED_PERSONAS, embedder)
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn personas(&self) -> &[String] {
        &self.personas
    }

    /// Indices of the `k` personas most similar to `query` (ties by store order).
    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k.clamp(1, self.len()));
        scored.into_iter().map(|(i, _)| i).collect()
    }
}

/// Top-`k` retrieval against the tool text, then a uniform pick among those `k`.
pub fn sample_persona(
    store: &PersonaStore,
    seed_tool: &Tool,
    k: usize,
    rng_seed: u64,
) -> Result<String, ScenarioError> {
    let query = store.embedder.embed(&tool_text(seed_tool))?;
    let top = store.top_k(&query, k);
    let pick = seeds::rng(rng_seed).random_range(0..top.len());
    Ok(store.personas[top[pick]].clone())
}

/// First literal mention of the tool name (case-insensitive) or a parameter name
/// (whole word, case-sensitive) in `goal`.
pub fn goal_leak(goal: &str, tool: &Tool) -> Option<String> {
    if goal.to_lowercase().contains(&tool.name.to_lowercase()) {
        return Some(tool.name.clone());
    }
    tool.params.keys().find(|p| contains_word(goal, p)).cloned()
}

pub fn sample_goal(
    client: &LlmClient,
    seed_tool: &Tool,
    persona: &str,
    rng_seed: u64,
) -> Result<String, ScenarioError> {
    let prompt = prompts::GOAL_GENERATION
        .render(&[("user_persona", persona), ("gold_tool", &render_tool(seed_tool))])
        .expect("goal prompt slots");
    let mut leaked = String::new();
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let seed = seeds::split(rng_seed, &format!("attempt/{attempt}"));
        let req = client.request(vec![ChatMessage::user(prompt.clone())], seed);
        let goal = client.complete(&req)?.trim().to_string();
        match goal_leak(&goal, seed_tool) {
            None if !goal.is_empty() => return Ok(goal),
            None => leaked = "<empty goal>".into(),
            Some(word) => leaked = word,
        }
        log::debug!("goal attempt {} for {} rejected: {leaked}", attempt + 1, seed_tool.name);
        last = goal;
    }
    Err(ScenarioError::GoalLeak { attempts: MAX_ATTEMPTS, leaked, last })
}

/// Check a generated value map against the tool's required parameters.
pub fn check_gold_args(tool: &Tool, value: &Value) -> Result<ArgMap, String> {
    let obj = value.as_object().ok_or("reply is not a JSON object")?;
    let required = tool.required_args();
    if let Some(extra) = obj.keys().find(|k| !required.contains(&k.as_str())) {
        return Err(format!("unexpected key `{extra}`"));
    }
    for name in &required {
        let spec = &tool.params[*name];
        match obj.get(*name) {
            None => return Err(format!("missing key `{name}`")),
            Some(v) if !spec.type_tag.admits(v) => {
                return Err(format!("`{name}` = {v} is not of type {}", spec.type_tag))
            }
            Some(_) => {}
        }
    }
    // Re-key in parameter order so serialized scenarios are stable.
    Ok(required
        .iter()
        .map(|n| (n.to_string(), obj[*n].clone()))
        .collect())
}

pub fn sample_gold_args(
    client: &LlmClient,
    seed_tool: &Tool,
    persona: &str,
    rng_seed: u64,
) -> Result<ArgMap, ScenarioError> {
    let required = seed_tool.required_args();
    if required.is_empty() {
        return Ok(ArgMap::new());
    }
    let listing: String = required
        .iter()
        .map(|n| format!("- {n} ({})\n", seed_tool.params[*n].type_tag))
        .collect();
    let prompt = prompts::SLOT_GENERATION
        .render(&[
            ("user_persona", persona),
            ("gold_tool", &render_tool(seed_tool)),
            ("required_params", listing.trim_end()),
        ])
        .expect("slot prompt slots");
    let mut reason = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let seed = seeds::split(rng_seed, &format!("attempt/{attempt}"));
        let req = client.request(vec![ChatMessage::user(prompt.clone())], seed);
        let reply = client.complete(&req)?;
        let checked = parse_json_reply(&reply)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|v| check_gold_args(seed_tool, &v));
        match checked {
            Ok(args) => return Ok(args),
            Err(r) => {
                log::debug!("slot attempt {} for {} rejected: {r}", attempt + 1, seed_tool.name);
                reason = r;
            }
        }
    }
    Err(ScenarioError::SlotMismatch {
        tool: seed_tool.name.clone(),
        attempts: MAX_ATTEMPTS,
        reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed_tool: String,
    pub persona: String,
    pub goal: String,
    pub distractors: DistractorSet,
    pub pool: Vec<String>,
    pub gold_args: ArgMap,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn make_id(seed_tool: &str, rng_seed: u64) -> String {
        format!("{seed_tool}#{rng_seed:016x}")
    }

    /// Distractor tools resolved against the catalogue, in similarity order.
    pub fn distractor_tools<'a>(&self, cat: &'a Catalogue) -> Result<Vec<&'a Tool>, CatalogueError> {
        self.distractors.members.iter().map(|m| cat.require(&m.name)).collect()
    }

    pub fn pool_tools<'a>(&self, cat: &'a Catalogue) -> Result<Vec<&'a Tool>, CatalogueError> {
        self.pool.iter().map(|n| cat.require(n)).collect()
    }
}

/// Everything scenario construction needs. Shared read-only across worker threads.
pub struct ScenarioSampler<'a> {
    pub catalogue: &'a Catalogue,
    pub index: &'a ToolIndex,
    pub personas: &'a PersonaStore,
    pub goal_client: &'a LlmClient,
    pub slot_client: &'a LlmClient,
    pub k: usize,
    pub persona_k: usize,
}

impl ScenarioSampler<'_> {
    pub fn build(&self, seed_tool: &str, rng_seed: u64) -> Result<Scenario, ScenarioError> {
        let tool = self.catalogue.require(seed_tool)?;
        let persona = sample_persona(
            self.personas,
            tool,
            self.persona_k,
            seeds::split(rng_seed, "persona"),
        )?;
        let goal = sample_goal(self.goal_client, tool, &persona, seeds::split(rng_seed, "goal"))?;
        let distractors = self.index.nearest_distractors(seed_tool, self.k)?;
        let pool = candidate_pool(seed_tool, &distractors, seeds::split(rng_seed, "pool"));
        let gold_args =
            sample_gold_args(self.slot_client, tool, &persona, seeds::split(rng_seed, "slots"))?;
        Ok(Scenario {
            id: Scenario::make_id(seed_tool, rng_seed),
            seed_tool: seed_tool.to_string(),
            persona,
            goal,
            distractors,
            pool,
            gold_args,
            rng_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalogue::{ParamSpec, ParamType};
    use crate::embed::HashEmbedder;
    use crate::gateway::FnBackend;
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn emb() -> Arc<dyn Embedder> {
        Arc::new(HashEmbedder::default())
    }

    fn transport_tool() -> Tool {
        Tool::new(
            "fn_1126_cloud_transport_management",
            "Retrieve the action log of a transport request in cloud transport management",
        )
        .with_param("nodeId", ParamSpec::new(ParamType::Integer, "Transport node identifier", true))
        .with_param(
            "transportRequestId",
            ParamSpec::new(ParamType::Integer, "Transport request identifier", true),
        )
    }

    fn sequence(replies: &'static [&'static str]) -> (LlmClient, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = FnBackend::single(move |_| {
            let i = c.fetch_add(1, Ordering::SeqCst);
            replies[i.min(replies.len() - 1)].to_string()
        });
        (LlmClient::new("gen", Arc::new(backend)), calls)
    }

    #[test]
    fn singleton_store_always_returns_its_persona() {
        let store = PersonaStore::new(vec!["only".into()], emb()).unwrap();
        for s in 0..20 {
            assert_eq!(sample_persona(&store, &transport_tool(), 10, s).unwrap(), "only");
        }
        assert!(PersonaStore::new(vec![], emb()).is_err());
        assert!(PersonaStore::new(vec![" ".into()], emb()).is_err());
    }

    #[test]
    fn logistics_persona_is_in_top_k() {
        let store = PersonaStore::bundled(emb()).unwrap();
        let query = emb().embed(&tool_text(&transport_tool())).unwrap();
        let top: Vec<&str> = store.top_k(&query, 10).iter().map(|&i| store.personas()[i].as_str()).collect();
        assert!(top.iter().any(|p| p.contains("logistics") || p.contains("transport")), "{top:?}");
    }

    #[test]
    fn goal_regenerates_on_leak_then_errors() {
        let (client, calls) = sequence(&[
            "Use fn_1126_cloud_transport_management please.",
            "Track actions during transport activities.",
        ]);
        let goal = sample_goal(&client, &transport_tool(), "p", 1).unwrap();
        assert_eq!(goal, "Track actions during transport activities.");
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let (client, calls) = sequence(&["I need the nodeId for my report."]);
        let err = sample_goal(&client, &transport_tool(), "p", 1).unwrap_err();
        assert!(matches!(err, ScenarioError::GoalLeak { attempts: 3, .. }), "{err}");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gold_args_are_type_gated() {
        let (client, _) = sequence(&["```json\n{\"transportRequestId\": 957841, \"nodeId\": 437292}\n```"]);
        let args = sample_gold_args(&client, &transport_tool(), "p", 1).unwrap();
        assert_eq!(serde_json::Value::Object(args.clone()), json!({"nodeId": 437292, "transportRequestId": 957841}));
        assert_eq!(args.keys().collect::<Vec<_>>(), vec!["nodeId", "transportRequestId"]);

        let tool = Tool::new("t", "d").with_param("region", ParamSpec::new(ParamType::String, "r", true));
        let (client, calls) = sequence(&["{\"region\": 12}", "{\"region\": \"EU\"}"]);
        let args = sample_gold_args(&client, &tool, "p", 1).unwrap();
        assert_eq!(args["region"], "EU");
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let (client, _) = sequence(&["{\"region\": 12}"]);
        assert!(matches!(
            sample_gold_args(&client, &tool, "p", 1),
            Err(ScenarioError::SlotMismatch { .. })
        ));
    }

    #[test]
    fn param_free_tool_skips_generation() {
        let (client, calls) = sequence(&["unused"]);
        assert!(sample_gold_args(&client, &Tool::new("t", "d"), "p", 1).unwrap().is_empty());
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn optional_params_excluded_from_gold() {
        let tool = transport_tool().with_param("note", ParamSpec::new(ParamType::String, "n", false));
        assert!(check_gold_args(&tool, &json!({"nodeId": 1, "transportRequestId": 2})).is_ok());
        assert!(check_gold_args(&tool, &json!({"nodeId": 1, "transportRequestId": 2, "note": "x"})).is_err());
        assert!(check_gold_args(&tool, &json!({"nodeId": 1})).is_err());
        assert!(check_gold_args(&tool, &json!({"nodeId": "1", "transportRequestId": 2})).is_err());
    }

    #[test]
    fn build_is_deterministic_and_pool_clamps() {
        let cat = Catalogue::from_tools(vec![transport_tool(), Tool::new("other", "create invoices")]).unwrap();
        let e = emb();
        let index = ToolIndex::build(&cat, e.as_ref()).unwrap();
        let store = PersonaStore::bundled(e).unwrap();
        let goal = LlmClient::new("g", Arc::new(FnBackend::single(|_| "Review transport activity.".into())));
        let slots = LlmClient::new("s", Arc::new(FnBackend::single(|_| "{\"nodeId\": 437292, \"transportRequestId\": 957841}".into())));
        let sampler = ScenarioSampler {
            catalogue: &cat,
            index: &index,
            personas: &store,
            goal_client: &goal,
            slot_client: &slots,
            k: DEFAULT_K,
            persona_k: DEFAULT_PERSONA_K,
        };
        let a = sampler.build("fn_1126_cloud_transport_management", 99).unwrap();
        assert_eq!(a, sampler.build("fn_1126_cloud_transport_management", 99).unwrap());
        assert_eq!(a.pool.len(), 2);
        assert!(a.pool.contains(&a.seed_tool));
        assert_eq!(a.id, "fn_1126_cloud_transport_management#0000000000000063");
    }
}
