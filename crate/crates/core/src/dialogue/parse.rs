use super::{AssistantTurn, ToolCall};
use crate::text::strip_code_fence;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const SELECT_OPEN: &str = "<select>";
const SELECT_CLOSE: &str = "</select>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("empty assistant output")]
    Empty,
    #[error("missing <think> block")]
    MissingThink,
    #[error("unterminated <think> block")]
    UnterminatedThink,
    #[error("nothing follows the thought block")]
    EmptyResponse,
    #[error("tool-call list is empty")]
    EmptyToolCalls,
    #[error("unparseable tool-call list: {0}")]
    ToolCallJson(String),
    #[error("tool call with empty name")]
    EmptyToolName,
}

/// Split `<think>thought</think> response` into a turn. A response starting with `[` (after
/// removing an optional code fence) must be a JSON list of `{"name", "args"}` objects.
pub fn parse_assistant_output(raw: &str) -> Result<AssistantTurn, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let open = raw.find(THINK_OPEN).ok_or(ParseError::MissingThink)?;
    let after_open = &raw[open + THINK_OPEN.len()..];
    let close = after_open.find(THINK_CLOSE).ok_or(ParseError::UnterminatedThink)?;
    let thought = after_open[..close].trim().to_string();
    let rest = after_open[close + THINK_CLOSE.len()..].trim();
    if rest.is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    let body = strip_code_fence(rest);
    if body.starts_with('[') {
        let calls: Vec<ToolCall> =
            serde_json::from_str(body).map_err(|e| ParseError::ToolCallJson(e.to_string()))?;
        if calls.is_empty() {
            return Err(ParseError::EmptyToolCalls);
        }
        if calls.iter().any(|c| c.name.trim().is_empty()) {
            return Err(ParseError::EmptyToolName);
        }
        return Ok(AssistantTurn::call(thought, calls));
    }
    Ok(AssistantTurn::reply(thought, rest))
}

/// Tool name inside a `<select>NAME</select>` commitment marker, if the content carries one.
pub fn selection_marker(content: &str) -> Option<&str> {
    let start = content.find(SELECT_OPEN)? + SELECT_OPEN.len();
    let len = content[start..].find(SELECT_CLOSE)?;
    let name = content[start..start + len].trim();
    (!name.is_empty()).then_some(name)
}
