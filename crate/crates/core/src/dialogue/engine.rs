use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    assistant_context, parse_assistant_output, selection_marker, user_proxy_context,
    AssistantTurn, DialogueTrace, Message, Termination,
};
use crate::args::args_equal;
use crate::catalogue::{Catalogue, CatalogueError, Tool};
use crate::embed::{EmbedError, Embedder};
use crate::gateway::{GatewayError, LlmClient};
use crate::prompts::{self, UserProxyContext};
use crate::retrieval::ToolIndex;
use crate::scenario::Scenario;
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Hard cap on user/assistant turn pairs.
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    /// Total tool-selection attempts when the live retriever misses the seed tool.
    #[serde(default = "default_regen_attempts")]
    pub regen_attempts: usize,
}

fn default_max_turns() -> usize {
    12
}

fn default_regen_attempts() -> usize {
    5
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { max_turns: default_max_turns(), regen_attempts: default_regen_attempts() }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns < 2 {
            return Err(format!("max_turns must be at least 2, got {}", self.max_turns));
        }
        if self.regen_attempts < 1 {
            return Err("regen_attempts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionKind {
    WrongTool,
    RetrieverMiss,
    SelectionCap,
    Malformed,
}

/// A dialogue the engine gave up on. Persisted for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RejectionKind,
    pub detail: String,
    /// Messages produced before the rejection, if any.
    pub partial: Vec<Message>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("dialogue rejected ({:?}): {}", .0.kind, .0.detail)]
    Rejected(Rejection),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
}

impl EngineError {
    fn reject(kind: RejectionKind, detail: impl Into<String>, partial: &[Message]) -> Self {
        EngineError::Rejected(Rejection { kind, detail: detail.into(), partial: partial.to_vec() })
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            EngineError::Rejected(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Success,
    /// No success and the turn cap has been reached.
    CapPending,
}

/// Success iff the turn is a single call to the seed tool whose arguments equal the gold map.
/// `pairs_used` counts user/assistant pairs including this turn.
pub fn check_stopping(
    turn: &AssistantTurn,
    scn: &Scenario,
    pairs_used: usize,
    max_turns: usize,
) -> StopDecision {
    match turn.calls() {
        [call] if call.name == scn.seed_tool && args_equal(&call.args, &scn.gold_args) => {
            StopDecision::Success
        }
        _ if pairs_used >= max_turns => StopDecision::CapPending,
        _ => StopDecision::Continue,
    }
}

/// The assistant's tool lookup: embeds a query and scans the whole catalogue.
#[derive(Clone, Copy)]
pub struct LiveRetriever<'a> {
    pub index: &'a ToolIndex,
    pub embedder: &'a dyn Embedder,
}

impl LiveRetriever<'_> {
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<String>, EmbedError> {
        let v = self.embedder.embed(query)?;
        Ok(self.index.search(&v, k, None).into_iter().map(|s| s.name).collect())
    }
}

/// Output of the selection stage with the committing assistant message already dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPrefix {
    pub candidates: Vec<String>,
    pub messages: Vec<Message>,
    pub attempt: usize,
}

/// One engine per run; holds only shared references, so it can be used from many threads.
pub struct Synthesizer<'a> {
    pub catalogue: &'a Catalogue,
    pub retriever: LiveRetriever<'a>,
    pub user: &'a LlmClient,
    pub assistant: &'a LlmClient,
    pub config: EngineConfig,
}

struct Turn<'s> {
    scn: &'s Scenario,
    gold: &'s Tool,
    distractors: Vec<&'s Tool>,
    seed: u64,
}

impl Turn<'_> {
    fn user_system(&self, reveal: bool) -> String {
        UserProxyContext {
            persona: &self.scn.persona,
            goal: &self.scn.goal,
            gold: self.gold,
            values: reveal.then_some(&self.scn.gold_args),
            distractors: &self.distractors,
        }
        .system_prompt()
    }
}

impl<'a> Synthesizer<'a> {
    fn user_says(&self, t: &Turn, system: &str, messages: &[Message], label: &str) -> Result<String, EngineError> {
        let req = self
            .user
            .request(user_proxy_context(system, messages), seeds::split(t.seed, label));
        let reply = self.user.complete(&req)?.trim().to_string();
        if reply.is_empty() {
            return Err(EngineError::Gateway(GatewayError::Protocol("user-proxy returned empty text".into())));
        }
        Ok(reply)
    }

    fn assistant_says(
        &self,
        t: &Turn,
        system: &str,
        messages: &[Message],
        label: &str,
    ) -> Result<AssistantTurn, EngineError> {
        let req = self
            .assistant
            .request(assistant_context(system, messages), seeds::split(t.seed, label));
        let raw = self.assistant.complete(&req)?;
        parse_assistant_output(&raw).map_err(|e| {
            EngineError::reject(RejectionKind::Malformed, format!("{label}: {e}"), messages)
        })
    }

    fn turn<'s>(&self, scn: &'s Scenario) -> Result<Turn<'s>, EngineError>
    where
        'a: 's,
    {
        Ok(Turn {
            scn,
            gold: self.catalogue.require(&scn.seed_tool)?,
            distractors: scn.distractor_tools(self.catalogue)?,
            seed: seeds::split(scn.rng_seed, "dialogue"),
        })
    }

    /// Tool-selection stage. Returns the dialogue up to (excluding) the assistant message that
    /// committed to the seed tool.
    pub fn run_tool_selection(&self, scn: &Scenario) -> Result<SelectionPrefix, EngineError> {
        let t = self.turn(scn)?;
        let system_user = t.user_system(false);
        let k = scn.pool.len();
        for attempt in 0..self.config.regen_attempts {
            let tag = format!("attempt/{attempt}");
            let mut messages = Vec::new();
            let opening = self.user_says(&t, &system_user, &messages, &format!("{tag}/user/1"))?;
            let mut candidates = self.retriever.retrieve(&opening, k)?;
            if !candidates.contains(&scn.seed_tool) {
                log::debug!("{}: retriever missed seed on attempt {}", scn.id, attempt + 1);
                continue;
            }
            candidates.shuffle(&mut seeds::rng(seeds::split(t.seed, &format!("{tag}/order"))));
            let tools = candidates
                .iter()
                .map(|n| self.catalogue.require(n))
                .collect::<Result<Vec<_>, _>>()?;
            let system_asst = prompts::assistant_selection_system(tools.iter().copied());
            messages.push(Message::user(opening));

            for pair in 1..=self.config.max_turns {
                let turn = self.assistant_says(&t, &system_asst, &messages, &format!("{tag}/assistant/{pair}"))?;
                let committed = match turn.calls() {
                    [] => selection_marker(&turn.content).map(str::to_owned),
                    calls => Some(calls[0].name.clone()),
                };
                if let Some(name) = committed {
                    if name != scn.seed_tool || turn.calls().iter().any(|c| c.name != name) {
                        messages.push(Message::Assistant(turn));
                        return Err(EngineError::reject(
                            RejectionKind::WrongTool,
                            format!("selected `{name}`, expected `{}`", scn.seed_tool),
                            &messages,
                        ));
                    }
                    return Ok(SelectionPrefix { candidates, messages, attempt });
                }
                messages.push(Message::Assistant(turn));
                if pair == self.config.max_turns {
                    break;
                }
                let next = self.user_says(&t, &system_user, &messages, &format!("{tag}/user/{}", pair + 1))?;
                messages.push(Message::user(next));
            }
            return Err(EngineError::reject(
                RejectionKind::SelectionCap,
                format!("no tool selected within {} turns", self.config.max_turns),
                &messages,
            ));
        }
        Err(EngineError::reject(
            RejectionKind::RetrieverMiss,
            format!("seed tool not retrieved in {} attempts", self.config.regen_attempts),
            &[],
        ))
    }

    /// Parameter-filling stage, continuing from a selection prefix until the stopping
    /// criterion holds or the turn cap is reached.
    pub fn run_param_filling(
        &self,
        prefix: SelectionPrefix,
        scn: &Scenario,
    ) -> Result<DialogueTrace, EngineError> {
        let t = self.turn(scn)?;
        let system_user = t.user_system(true);
        let tools = prefix
            .candidates
            .iter()
            .map(|n| self.catalogue.require(n))
            .collect::<Result<Vec<_>, _>>()?;
        let system_asst = prompts::assistant_fill_system(tools.iter().copied(), t.gold);
        let tag = format!("attempt/{}/fill", prefix.attempt);
        let mut messages = prefix.messages;
        let phase_boundary = messages.iter().filter(|m| m.as_user().is_some()).count();

        let terminated_by = loop {
            let pair = messages.iter().filter(|m| m.as_user().is_some()).count();
            let turn = self.assistant_says(&t, &system_asst, &messages, &format!("{tag}/assistant/{pair}"))?;
            let decision = check_stopping(&turn, scn, pair, self.config.max_turns);
            messages.push(Message::Assistant(turn));
            match decision {
                StopDecision::Success => break Termination::ToolCall,
                StopDecision::CapPending => break Termination::TurnCap,
                StopDecision::Continue => {}
            }
            let next = self.user_says(&t, &system_user, &messages, &format!("{tag}/user/{}", pair + 1))?;
            messages.push(Message::user(next));
        };
        Ok(DialogueTrace {
            id: scn.id.clone(),
            scenario_id: scn.id.clone(),
            candidates: prefix.candidates,
            messages,
            phase_boundary,
            terminated_by,
        })
    }

    pub fn synthesize(&self, scn: &Scenario) -> Result<DialogueTrace, EngineError> {
        let prefix = self.run_tool_selection(scn)?;
        self.run_param_filling(prefix, scn)
    }
}
