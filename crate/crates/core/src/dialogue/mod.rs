//! Dialogue traces and the two-phase synthesis engine.

mod engine;
mod parse;

use serde::{Deserialize, Serialize};

use crate::args::ArgMap;
use crate::gateway::ChatMessage;

pub use engine::{
    check_stopping, EngineConfig, EngineError, LiveRetriever, Rejection, RejectionKind,
    SelectionPrefix, StopDecision, Synthesizer,
};
pub use parse::{parse_assistant_output, selection_marker, ParseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(alias = "arguments")]
    pub args: ArgMap,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, args: ArgMap) -> Self {
        Self { name: name.into(), args }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantTurn {
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default)]
    pub content: String,
    /// Set when the raw model output could not be parsed; `content` then holds the raw text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
}

impl AssistantTurn {
    pub fn reply(thought: impl Into<String>, content: impl Into<String>) -> Self {
        Self { thought: thought.into(), tool_calls: None, content: content.into(), malformed: false }
    }

    pub fn call(thought: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Self { thought: thought.into(), tool_calls: Some(calls), content: String::new(), malformed: false }
    }

    pub fn malformed(raw: impl Into<String>) -> Self {
        Self { thought: String::new(), tool_calls: None, content: raw.into(), malformed: true }
    }

    pub fn calls(&self) -> &[ToolCall] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    pub fn has_calls(&self) -> bool {
        !self.calls().is_empty()
    }

    /// The user-visible part: the compact tool-call list, or the content.
    pub fn payload(&self) -> String {
        match &self.tool_calls {
            Some(calls) => serde_json::to_string(calls).expect("tool calls serialize"),
            None => self.content.clone(),
        }
    }

    /// Wire form `<think>thought</think> payload`. Malformed turns render as their raw text.
    pub fn render(&self) -> String {
        if self.malformed {
            return self.content.clone();
        }
        format!("<think>{}</think> {}", self.thought, self.payload())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum Message {
    User { content: String },
    Assistant(AssistantTurn),
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message::User { content: content.into() }
    }

    pub fn as_assistant(&self) -> Option<&AssistantTurn> {
        match self {
            Message::Assistant(a) => Some(a),
            Message::User { .. } => None,
        }
    }

    pub fn as_user(&self) -> Option<&str> {
        match self {
            Message::User { content } => Some(content),
            Message::Assistant(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ToolCall,
    TurnCap,
}

/// One synthesized or evaluated dialogue: the corpus interchange record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTrace {
    pub id: String,
    pub scenario_id: String,
    /// Tools the assistant saw, in presentation order.
    pub candidates: Vec<String>,
    pub messages: Vec<Message>,
    /// Number of user turns that belong to tool selection; parameter filling starts after.
    pub phase_boundary: usize,
    pub terminated_by: Termination,
}

impl DialogueTrace {
    pub fn assistant_turns(&self) -> impl Iterator<Item = &AssistantTurn> {
        self.messages.iter().filter_map(Message::as_assistant)
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().filter_map(Message::as_user)
    }

    pub fn assistant_count(&self) -> usize {
        self.assistant_turns().count()
    }

    pub fn user_count(&self) -> usize {
        self.user_turns().count()
    }

    pub fn last_assistant(&self) -> Option<&AssistantTurn> {
        self.messages.last().and_then(Message::as_assistant)
    }

    /// Whether messages strictly alternate user, assistant, user, ... and end on an assistant turn.
    pub fn alternates(&self) -> bool {
        !self.messages.is_empty()
            && self.messages.len().is_multiple_of(2)
            && self.messages.iter().enumerate().all(|(i, m)| match m {
                Message::User { .. } => i % 2 == 0,
                Message::Assistant(_) => i % 2 == 1,
            })
    }
}

/// Assistant-side chat context: system prompt, then the dialogue with prior thoughts included.
pub fn assistant_context(system: &str, messages: &[Message]) -> Vec<ChatMessage> {
    std::iter::once(ChatMessage::system(system))
        .chain(messages.iter().map(|m| match m {
            Message::User { content } => ChatMessage::user(content.clone()),
            Message::Assistant(a) => ChatMessage::assistant(a.render()),
        }))
        .collect()
}

/// Opening user message for the user-proxy, whose own utterances play the assistant role.
pub const USER_PROXY_KICKOFF: &str = "The conversation has not started yet. Write your first message to the assistant.";

/// User-proxy chat context: roles are flipped and thoughts are hidden.
pub fn user_proxy_context(system: &str, messages: &[Message]) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::system(system), ChatMessage::user(USER_PROXY_KICKOFF)];
    out.extend(messages.iter().map(|m| match m {
        Message::User { content } => ChatMessage::assistant(content.clone()),
        Message::Assistant(a) => ChatMessage::user(a.payload()),
    }));
    out
}
