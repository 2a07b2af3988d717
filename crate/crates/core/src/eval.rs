//! Static and dynamic evaluation of an assistant backend, with a voting user-proxy for
//! dynamic rollouts.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalogue::{Catalogue, CatalogueError, Tool};
use crate::dialogue::{
    assistant_context, parse_assistant_output, user_proxy_context, AssistantTurn, DialogueTrace,
    Message, Termination,
};
use crate::gateway::{BackendConfig, ChatMessage, GatewayError, LlmClient};
use crate::metrics::{self, MetricError, MetricReport, Reference};
use crate::pool::parallel_map;
use crate::prompts::{self, render_args, render_tool, UserProxyContext};
use crate::scenario::Scenario;
use crate::seeds;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("static task {0} carries no gold dialogue")]
    MissingGold(String),
    #[error("invalid voting config: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_dialogue: Option<DialogueTrace>,
    pub mode: EvalMode,
}

impl EvalTask {
    pub fn fixed(scenario: Scenario, gold: DialogueTrace) -> Self {
        Self { scenario, gold_dialogue: Some(gold), mode: EvalMode::Static }
    }

    pub fn rollout(scenario: Scenario) -> Self {
        Self { scenario, gold_dialogue: None, mode: EvalMode::Dynamic }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolFn {
    #[default]
    Mode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingConfig {
    #[serde(default = "three")]
    pub n_samples: usize,
    #[serde(default = "three")]
    pub m_voters: usize,
    #[serde(default)]
    pub pool_fn: PoolFn,
    pub generator: BackendConfig,
    pub voter: BackendConfig,
    pub rng_seed: u64,
}

fn three() -> usize {
    3
}

impl VotingConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_samples == 0 || self.m_voters == 0 {
            return Err(EvalError::Config("n_samples and m_voters must be at least 1".into()));
        }
        self.generator.validate()?;
        self.voter.validate()?;
        Ok(())
    }
}

/// Runtime form of the voting user-proxy.
#[derive(Debug, Clone)]
pub struct VotingProxy {
    pub generator: LlmClient,
    pub voter: LlmClient,
    pub n_samples: usize,
    pub m_voters: usize,
    pub rng_seed: u64,
}

/// Display order for one voter: `order[q]` is the original index shown at position `q`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed));
    order
}

/// Map a 1-based displayed position back to the 0-based original index.
pub fn to_original(order: &[usize], position: usize) -> Option<usize> {
    position.checked_sub(1).and_then(|q| order.get(q).copied())
}

/// Most frequent index; ties go to the lowest index. `None` when there are no votes.
pub fn mode_of(votes: &[usize], n: usize) -> Option<usize> {
    let mut counts = vec![0usize; n];
    for &v in votes.iter().filter(|&&v| v < n) {
        counts[v] += 1;
    }
    let best = *counts.iter().max()?;
    (best > 0).then(|| counts.iter().position(|&c| c == best).expect("max exists"))
}

/// First integer in a voter reply.
pub fn parse_vote(reply: &str) -> Option<usize> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Everything the user-proxy knows when producing its next utterance.
pub struct VoteContext<'a> {
    pub persona: &'a str,
    pub goal: &'a str,
    pub gold: &'a Tool,
    pub distractors: &'a [&'a Tool],
    pub gold_args: &'a crate::args::ArgMap,
    pub history: &'a [Message],
}

impl VoteContext<'_> {
    fn system_prompt(&self) -> String {
        UserProxyContext {
            persona: self.persona,
            goal: self.goal,
            gold: self.gold,
            values: Some(self.gold_args),
            distractors: self.distractors,
        }
        .system_prompt()
    }

    fn history_text(&self) -> String {
        if self.history.is_empty() {
            return "(no messages yet)".into();
        }
        self.history
            .iter()
            .map(|m| match m {
                Message::User { content } => format!("User: {content}"),
                Message::Assistant(a) => format!("Assistant: {}", a.payload()),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn voter_prompt(ctx: &VoteContext, shown: &[&str]) -> String {
    let listing = shown
        .iter()
        .enumerate()
        .map(|(q, c)| format!("{}. {}", q + 1, c))
        .collect::<Vec<_>>()
        .join("\n");
    prompts::VOTER
        .render(&[
            ("user_persona", ctx.persona),
            ("goal", ctx.goal),
            ("gold_tool", &render_tool(ctx.gold)),
            ("parameter_values", &render_args(ctx.gold_args)),
            ("history", &ctx.history_text()),
            ("candidates", &listing),
        ])
        .expect("voter slots")
}

impl VotingProxy {
    /// Sample `n` candidates, collect `m` votes over independently permuted listings and
    /// return the modal candidate.
    pub fn vote_utterance(&self, ctx: &VoteContext, seed: u64) -> Result<String, GatewayError> {
        let req = self
            .generator
            .request(user_proxy_context(&ctx.system_prompt(), ctx.history), seeds::split(seed, "samples"));
        let candidates = self.generator.sample_n(&req, self.n_samples)?;
        if candidates.len() == 1 {
            return Ok(candidates[0].trim().to_string());
        }
        let n = candidates.len();
        let votes: Vec<Result<Option<usize>, GatewayError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.m_voters)
                .map(|j| {
                    let candidates = &candidates;
                    s.spawn(move || {
                        let order = permutation(n, seeds::split(seed, &format!("voter/{j}/order")));
                        let shown: Vec<&str> = order.iter().map(|&i| candidates[i].as_str()).collect();
                        let req = self.voter.request(
                            vec![ChatMessage::user(voter_prompt(ctx, &shown))],
                            seeds::split(seed, &format!("voter/{j}")),
                        );
                        let reply = self.voter.complete(&req)?;
                        let vote = parse_vote(&reply).and_then(|q| to_original(&order, q));
                        if vote.is_none() {
                            log::debug!("voter {j} reply discarded: {:?}", reply.trim());
                        }
                        Ok(vote)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("voter thread panicked")).collect()
        });
        let votes: Vec<usize> = votes.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
        let pick = mode_of(&votes, n).unwrap_or_else(|| {
            log::warn!("all {} votes discarded, falling back to the first candidate", self.m_voters);
            0
        });
        Ok(candidates[pick].trim().to_string())
    }
}

/// Tools the evaluated assistant may call: the trace's candidate list if present, else the
/// scenario pool.
fn visible_tools<'c>(cat: &'c Catalogue, scn: &Scenario, gold: Option<&DialogueTrace>) -> Result<Vec<&'c Tool>, CatalogueError> {
    let names = match gold {
        Some(d) if !d.candidates.is_empty() => &d.candidates,
        _ => &scn.pool,
    };
    names.iter().map(|n| cat.require(n)).collect()
}

fn decode(assistant: &LlmClient, system: &str, messages: &[Message], seed: u64) -> Result<AssistantTurn, GatewayError> {
    let req = assistant.request(assistant_context(system, messages), seed);
    let raw = assistant.complete(&req)?;
    Ok(parse_assistant_output(&raw).unwrap_or_else(|e| {
        log::debug!("malformed assistant output ({e})");
        AssistantTurn::malformed(raw)
    }))
}

/// Re-decode every assistant turn of the gold dialogue while keeping its user turns fixed.
pub fn eval_static(task: &EvalTask, cat: &Catalogue, assistant: &LlmClient) -> Result<DialogueTrace, EvalError> {
    let scn = &task.scenario;
    let gold = task.gold_dialogue.as_ref().ok_or_else(|| EvalError::MissingGold(scn.id.clone()))?;
    let system = prompts::assistant_system(visible_tools(cat, scn, Some(gold))?);
    let seed = seeds::split(scn.rng_seed, "eval/static");
    let mut messages = Vec::with_capacity(gold.messages.len());
    for (t, user) in gold.user_turns().enumerate() {
        messages.push(Message::user(user));
        let turn = decode(assistant, &system, &messages, seeds::split(seed, &format!("assistant/{}", t + 1)))?;
        messages.push(Message::Assistant(turn));
    }
    let called = messages.iter().filter_map(Message::as_assistant).any(AssistantTurn::has_calls);
    Ok(DialogueTrace {
        id: gold.id.clone(),
        scenario_id: scn.id.clone(),
        candidates: gold.candidates.clone(),
        messages,
        phase_boundary: gold.phase_boundary,
        terminated_by: if called { Termination::ToolCall } else { Termination::TurnCap },
    })
}

/// Roll out a fresh dialogue against the voting user-proxy. Stops at the first tool call or
/// after `t_max` pairs.
pub fn eval_dynamic(
    scn: &Scenario,
    cat: &Catalogue,
    assistant: &LlmClient,
    proxy: &VotingProxy,
    t_max: usize,
) -> Result<DialogueTrace, EvalError> {
    let gold = cat.require(&scn.seed_tool)?;
    let distractors = scn.distractor_tools(cat)?;
    let system = prompts::assistant_system(visible_tools(cat, scn, None)?);
    let seed = seeds::split(scn.rng_seed, "eval/dynamic");
    let vote_seed = seeds::split(proxy.rng_seed, &scn.id);
    let mut messages: Vec<Message> = Vec::new();
    let mut terminated_by = Termination::TurnCap;
    for pair in 1..=t_max {
        let ctx = VoteContext {
            persona: &scn.persona,
            goal: &scn.goal,
            gold,
            distractors: &distractors,
            gold_args: &scn.gold_args,
            history: &messages,
        };
        let utterance = proxy.vote_utterance(&ctx, seeds::split(vote_seed, &format!("user/{pair}")))?;
        messages.push(Message::user(utterance));
        let turn = decode(assistant, &system, &messages, seeds::split(seed, &format!("assistant/{pair}")))?;
        let done = turn.has_calls();
        messages.push(Message::Assistant(turn));
        if done {
            terminated_by = Termination::ToolCall;
            break;
        }
    }
    Ok(DialogueTrace {
        id: scn.id.clone(),
        scenario_id: scn.id.clone(),
        candidates: scn.pool.clone(),
        messages,
        phase_boundary: 0,
        terminated_by,
    })
}

pub struct Benchmark<'a> {
    pub catalogue: &'a Catalogue,
    pub assistant: &'a LlmClient,
    pub proxy: Option<&'a VotingProxy>,
    pub judge: Option<&'a LlmClient>,
    pub t_max: usize,
    pub workers: usize,
    /// Scenario ids left out of scoring (their traces are still returned).
    pub exclude: HashSet<String>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub traces: Vec<DialogueTrace>,
    pub report: MetricReport,
}

impl Benchmark<'_> {
    pub fn run_task(&self, task: &EvalTask) -> Result<DialogueTrace, EvalError> {
        match task.mode {
            EvalMode::Static => eval_static(task, self.catalogue, self.assistant),
            EvalMode::Dynamic => {
                let proxy = self
                    .proxy
                    .ok_or_else(|| EvalError::Config("dynamic tasks need a voting user-proxy".into()))?;
                eval_dynamic(&task.scenario, self.catalogue, self.assistant, proxy, self.t_max)
            }
        }
    }

    pub fn run(&self, tasks: &[EvalTask]) -> Result<BenchmarkOutcome, EvalError> {
        if tasks.is_empty() {
            return Err(EvalError::NoTasks);
        }
        let traces = parallel_map(tasks, self.workers, |_, t| self.run_task(t))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let scored: Vec<(DialogueTrace, Reference)> = tasks
            .iter()
            .zip(&traces)
            .filter(|(t, _)| !self.exclude.contains(&t.scenario.id))
            .map(|(t, d)| (d.clone(), Reference::from(&t.scenario)))
            .collect();
        let conv = match self.judge {
            Some(j) if !scored.is_empty() => Some(metrics::conv_relevancy_all(&scored, j, self.seed, self.workers)?),
            _ => None,
        };
        let report = metrics::score(&scored, conv.as_deref())?;
        Ok(BenchmarkOutcome { traces, report })
    }
}
