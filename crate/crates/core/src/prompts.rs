//! Versioned prompt templates and the `{{slot}}` renderer.

use serde_json::Value;

use crate::args::ArgMap;
use crate::catalogue::Tool;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {template} has no value for slot `{slot}`")]
    MissingSlot { template: &'static str, slot: String },
    #[error("template {template} has an unterminated slot")]
    Unterminated { template: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prompt {
    pub id: &'static str,
    pub text: &'static str,
}

macro_rules! prompt {
    ($name:ident, $id:literal, $file:literal) => {
        pub const $name: Prompt = Prompt {
            id: $id,
            text: include_str!(concat!("../assets/prompts/", $file)),
        };
    };
}

prompt!(ASSISTANT_REFERENCE, "assistant_reference/v1", "assistant_reference.txt");
prompt!(ASSISTANT_SELECT, "assistant_select/v1", "assistant_select.txt");
prompt!(ASSISTANT_FILL, "assistant_fill/v1", "assistant_fill.txt");
prompt!(USER_PROXY, "user_proxy/v1", "user_proxy.txt");
prompt!(GOAL_GENERATION, "goal_generation/v1", "goal_generation.txt");
prompt!(SLOT_GENERATION, "slot_generation/v1", "slot_generation.txt");
prompt!(JUDGE_RELEVANCY, "judge_relevancy/v1", "judge_relevancy.txt");
prompt!(JUDGE_CRITIQUE, "judge_critique/v1", "judge_critique.txt");
prompt!(JUDGE_CONVREL, "judge_convrel/v1", "judge_convrel.txt");
prompt!(VOTER, "voter/v1", "voter.txt");

pub const ALL: [Prompt; 10] = [
    ASSISTANT_REFERENCE,
    ASSISTANT_SELECT,
    ASSISTANT_FILL,
    USER_PROXY,
    GOAL_GENERATION,
    SLOT_GENERATION,
    JUDGE_RELEVANCY,
    JUDGE_CRITIQUE,
    JUDGE_CONVREL,
    VOTER,
];

impl Prompt {
    /// Substitute every `{{slot}}` in one pass. Substituted text is not rescanned, so values
    /// may contain braces freely. Every slot in the template must be supplied.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or(PromptError::Unterminated { template: self.id })?;
            let key = &after[..end];
            let value = slots
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingSlot { template: self.id, slot: key.into() })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn slots(&self) -> Vec<&'static str> {
        let mut found = Vec::new();
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            if !found.contains(&&after[..end]) {
                found.push(&after[..end]);
            }
            rest = &after[end + 2..];
        }
        found
    }
}

/// Tools as a pretty JSON array in the prompt schema.
pub fn render_tools<'a>(tools: impl IntoIterator<Item = &'a Tool>) -> String {
    let list: Vec<Value> = tools.into_iter().map(Tool::prompt_json).collect();
    serde_json::to_string_pretty(&list).expect("tool json serializes")
}

pub fn render_tool(tool: &Tool) -> String {
    serde_json::to_string_pretty(&tool.prompt_json()).expect("tool json serializes")
}

pub fn render_args(args: &ArgMap) -> String {
    serde_json::to_string_pretty(args).expect("args serialize")
}

/// The reference assistant system prompt with `tools` substituted.
pub fn assistant_system<'a>(tools: impl IntoIterator<Item = &'a Tool>) -> String {
    ASSISTANT_REFERENCE
        .render(&[("tools", &render_tools(tools))])
        .expect("reference prompt has only the tools slot")
}

pub fn assistant_selection_system<'a>(tools: impl IntoIterator<Item = &'a Tool>) -> String {
    assistant_system(tools) + ASSISTANT_SELECT.text
}

pub fn assistant_fill_system<'a>(tools: impl IntoIterator<Item = &'a Tool>, gold: &Tool) -> String {
    let addendum = ASSISTANT_FILL
        .render(&[("gold_tool_name", &gold.name)])
        .expect("fill addendum has one slot");
    assistant_system(tools) + &addendum
}

/// Placeholder shown to the user-proxy before argument values are handed over.
pub const VALUES_WITHHELD: &str = "(not needed yet; the assistant has not settled on a tool)";

pub struct UserProxyContext<'a> {
    pub persona: &'a str,
    pub goal: &'a str,
    pub gold: &'a Tool,
    pub values: Option<&'a ArgMap>,
    pub distractors: &'a [&'a Tool],
}

impl UserProxyContext<'_> {
    pub fn system_prompt(&self) -> String {
        let values = self.values.map(render_args);
        USER_PROXY
            .render(&[
                ("user_persona", self.persona),
                ("goal", self.goal),
                ("gold_tool", &render_tool(self.gold)),
                ("parameter_values", values.as_deref().unwrap_or(VALUES_WITHHELD)),
                ("distractor_tools", &render_tools(self.distractors.iter().copied())),
            ])
            .expect("user-proxy slots are all supplied")
    }
}
