//! Validator cascade: Format, Toolcall and Toolargs in that order with short-circuit, then the
//! Relevancy and Critique judges concurrently.

use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::args::{args_equal, values_equal};
use crate::catalogue::Catalogue;
use crate::dialogue::{DialogueTrace, Message, Termination};
use crate::gateway::{ChatMessage, GatewayError, LlmClient};
use crate::prompts::{self, render_args, render_tool};
use crate::scenario::Scenario;
use crate::seeds;
use crate::text::parse_json_reply;

pub const FORMAT: &str = "format";
pub const TOOLCALL: &str = "toolcall";
pub const TOOLARGS: &str = "toolargs";
pub const RELEVANCY: &str = "relevancy";
pub const CRITIQUE: &str = "critique";

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error("{validator} judge unavailable after re-queue: {source}")]
    Infrastructure {
        validator: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("scenario does not reference catalogue tools: {0}")]
    Catalogue(#[from] crate::catalogue::CatalogueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub validator: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dialogue_id: String,
    pub verdict: Verdict,
    pub failures: Vec<Failure>,
    /// Wall time per executed validator, in execution order (seconds on disk).
    #[serde(with = "seconds_map")]
    pub stage_timings: IndexMap<String, Duration>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn executed(&self) -> Vec<&str> {
        self.stage_timings.keys().map(String::as_str).collect()
    }
}

mod seconds_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &IndexMap<String, Duration>, s: S) -> Result<S::Ok, S::Error> {
        let secs: IndexMap<&str, f64> = m.iter().map(|(k, v)| (k.as_str(), v.as_secs_f64())).collect();
        secs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IndexMap<String, Duration>, D::Error> {
        let secs = IndexMap::<String, f64>::deserialize(d)?;
        secs.into_iter()
            .map(|(k, v)| {
                Duration::try_from_secs_f64(v)
                    .map(|d| (k, d))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

pub type Check = Result<(), String>;

pub fn validate_format(d: &DialogueTrace) -> Check {
    if !d.alternates() {
        return Err("alternation: turns must alternate user/assistant starting with the user and ending with the assistant".into());
    }
    if d.phase_boundary > d.user_count() {
        return Err(format!("schema: phase boundary {} exceeds {} user turns", d.phase_boundary, d.user_count()));
    }
    for (i, m) in d.messages.iter().enumerate() {
        match m {
            Message::User { content } if content.trim().is_empty() => {
                return Err(format!("schema: user message {i} is empty"))
            }
            Message::User { .. } => {}
            Message::Assistant(a) => {
                if a.malformed {
                    return Err(format!("schema: assistant message {i} is malformed"));
                }
                if a.thought.trim().is_empty() {
                    return Err(format!("thought: assistant message {i} has no reasoning trace"));
                }
                match &a.tool_calls {
                    Some(calls) if calls.is_empty() => {
                        return Err(format!("schema: assistant message {i} has an empty tool-call list"))
                    }
                    Some(_) if !a.content.trim().is_empty() => {
                        return Err(format!("schema: assistant message {i} mixes content and tool calls"))
                    }
                    None if a.content.trim().is_empty() => {
                        return Err(format!("schema: assistant message {i} has no response"))
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

pub fn validate_toolcall(d: &DialogueTrace, scn: &Scenario) -> Check {
    if d.terminated_by != Termination::ToolCall {
        return Err("dialogue ended without a tool call".into());
    }
    let last = d.last_assistant().ok_or("no final assistant turn")?;
    let calls = last.calls();
    if calls.len() != 1 {
        return Err(format!("final turn carries {} tool calls, expected 1", calls.len()));
    }
    if calls[0].name != scn.seed_tool {
        return Err(format!("final call targets `{}`, expected `{}`", calls[0].name, scn.seed_tool));
    }
    let earlier = d.assistant_turns().filter(|a| a.has_calls()).count();
    if earlier != 1 {
        return Err(format!("{} tool-bearing turns, expected only the final one", earlier));
    }
    Ok(())
}

pub fn validate_toolargs(d: &DialogueTrace, scn: &Scenario) -> Check {
    let call = d
        .last_assistant()
        .and_then(|a| a.calls().first())
        .ok_or("no tool call to check")?;
    if args_equal(&call.args, &scn.gold_args) {
        return Ok(());
    }
    let missing: Vec<&str> = scn.gold_args.keys().filter(|k| !call.args.contains_key(*k)).map(String::as_str).collect();
    let extra: Vec<&str> = call.args.keys().filter(|k| !scn.gold_args.contains_key(*k)).map(String::as_str).collect();
    let wrong: Vec<&str> = scn
        .gold_args
        .iter()
        .filter(|(k, v)| call.args.get(*k).is_some_and(|w| !values_equal(v, w)))
        .map(|(k, _)| k.as_str())
        .collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing {missing:?}"));
    }
    if !extra.is_empty() {
        parts.push(format!("superfluous {extra:?}"));
    }
    if !wrong.is_empty() {
        parts.push(format!("wrong values for {wrong:?}"));
    }
    Err(parts.join("; "))
}

/// The two LLM validators.
#[derive(Debug, Clone)]
pub struct Judges {
    pub relevancy: LlmClient,
    pub critique: LlmClient,
}

/// Transcript shown to judges: public text only, thoughts omitted.
pub fn public_transcript(d: &DialogueTrace) -> String {
    d.messages
        .iter()
        .map(|m| match m {
            Message::User { content } => format!("User: {content}"),
            Message::Assistant(a) => format!("Assistant: {}", a.payload()),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Deserialize)]
struct JudgeReply {
    verdict: String,
    #[serde(default)]
    reason: String,
}

/// Read a `{"verdict", "reason"}` reply. Anything unreadable counts as a failure.
pub fn parse_verdict(reply: &str) -> Check {
    let parsed = parse_json_reply(reply)
        .ok()
        .and_then(|v| serde_json::from_value::<JudgeReply>(v).ok());
    match parsed {
        Some(j) if j.verdict.eq_ignore_ascii_case("pass") => Ok(()),
        Some(j) if j.verdict.eq_ignore_ascii_case("fail") => Err(j.reason),
        _ => Err(format!("unparseable verdict: {}", reply.trim())),
    }
}

fn ask_judge(
    name: &'static str,
    client: &LlmClient,
    prompt: &str,
    seed: u64,
) -> (Result<Check, ValidationError>, Duration) {
    let start = Instant::now();
    let req = client.request(vec![ChatMessage::user(prompt)], seed);
    let reply = client.complete(&req).or_else(|e| {
        log::warn!("{name} judge failed ({e}), re-queueing once");
        client.complete(&req)
    });
    let out = reply
        .map(|r| parse_verdict(&r))
        .map_err(|source| ValidationError::Infrastructure { validator: name, source });
    (out, start.elapsed())
}

/// Run both judges concurrently. Results are returned in fixed order: relevancy, critique.
pub fn validate_llm(
    d: &DialogueTrace,
    scn: &Scenario,
    cat: &Catalogue,
    judges: &Judges,
) -> Result<Vec<(&'static str, Check, Duration)>, ValidationError> {
    let gold = render_tool(cat.require(&scn.seed_tool)?);
    let dialogue = public_transcript(d);
    let values = render_args(&scn.gold_args);
    let relevancy_prompt = prompts::JUDGE_RELEVANCY
        .render(&[("gold_tool", &gold), ("dialogue", &dialogue)])
        .expect("relevancy slots");
    let critique_prompt = prompts::JUDGE_CRITIQUE
        .render(&[("gold_tool", &gold), ("parameter_values", &values), ("dialogue", &dialogue)])
        .expect("critique slots");
    let seed = seeds::split(scn.rng_seed, "judges");
    let (rel, cri) = std::thread::scope(|s| {
        let rel = s.spawn(|| ask_judge(RELEVANCY, &judges.relevancy, &relevancy_prompt, seed));
        let cri = s.spawn(|| ask_judge(CRITIQUE, &judges.critique, &critique_prompt, seed));
        (rel.join().expect("judge thread panicked"), cri.join().expect("judge thread panicked"))
    });
    Ok(vec![(RELEVANCY, rel.0?, rel.1), (CRITIQUE, cri.0?, cri.1)])
}

/// Full cascade. `judges = None` stops after the functional validators.
pub fn run_cascade(
    d: &DialogueTrace,
    scn: &Scenario,
    cat: &Catalogue,
    judges: Option<&Judges>,
) -> Result<ValidationReport, ValidationError> {
    let mut failures = Vec::new();
    let mut timings = IndexMap::new();
    let functional: [(&str, &dyn Fn() -> Check); 3] = [
        (FORMAT, &|| validate_format(d)),
        (TOOLCALL, &|| validate_toolcall(d, scn)),
        (TOOLARGS, &|| validate_toolargs(d, scn)),
    ];
    for (name, check) in functional {
        let start = Instant::now();
        let result = check();
        timings.insert(name.to_string(), start.elapsed());
        if let Err(reason) = result {
            failures.push(Failure { validator: name.into(), reason });
            break;
        }
    }
    if failures.is_empty() {
        if let Some(judges) = judges {
            for (name, check, took) in validate_llm(d, scn, cat, judges)? {
                timings.insert(name.to_string(), took);
                if let Err(reason) = check {
                    failures.push(Failure { validator: name.into(), reason });
                }
            }
        }
    }
    Ok(ValidationReport {
        dialogue_id: d.id.clone(),
        verdict: if failures.is_empty() { Verdict::Accept } else { Verdict::Reject },
        failures,
        stage_timings: timings,
    })
}
