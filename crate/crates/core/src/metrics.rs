//! Tool-call correctness, precision/recall and conversational quality metrics.
//!
//! Ratios whose denominator is zero are reported as `None` (`null` in JSON, `NA` in CSV).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::args::{args_equal, ArgMap};
use crate::dialogue::{DialogueTrace, Message};
use crate::gateway::{ChatMessage, GatewayError, LlmClient};
use crate::prompts;
use crate::scenario::Scenario;
use crate::seeds;
use crate::text::{parse_json_reply, tokenize};

pub const NGRAM_ORDERS: [usize; 3] = [2, 3, 4];

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("rubric reply carries no grade in 1..=3: {0:?}")]
    Grade(String),
}

/// The first tool-bearing assistant turn of a dialogue.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tnames: BTreeSet<String>,
    /// Argument map per invoked tool; a tool listed twice keeps its first map.
    pub args_by_tool: IndexMap<String, ArgMap>,
    /// 1-based assistant turn index, `None` when the dialogue never calls a tool.
    pub t_dagger: Option<usize>,
}

impl CallRecord {
    pub fn is_empty(&self) -> bool {
        self.t_dagger.is_none()
    }

    /// Union of argument keys across invoked tools.
    pub fn keys(&self) -> BTreeSet<&str> {
        self.args_by_tool.values().flat_map(|a| a.keys().map(String::as_str)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub gold_tool: String,
    pub gold_args: ArgMap,
}

impl From<&Scenario> for Reference {
    fn from(s: &Scenario) -> Self {
        Self { gold_tool: s.seed_tool.clone(), gold_args: s.gold_args.clone() }
    }
}

pub fn extract_call(d: &DialogueTrace) -> CallRecord {
    for (t, turn) in d.assistant_turns().enumerate() {
        if !turn.has_calls() {
            continue;
        }
        let mut args_by_tool = IndexMap::new();
        for call in turn.calls() {
            args_by_tool.entry(call.name.clone()).or_insert_with(|| call.args.clone());
        }
        return CallRecord {
            tnames: args_by_tool.keys().cloned().collect(),
            args_by_tool,
            t_dagger: Some(t + 1),
        };
    }
    CallRecord::default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicators {
    pub acc: u8,
    pub ftr: usize,
    pub tar: u8,
}

pub fn dialogue_indicators(c: &CallRecord, g: &Reference) -> Indicators {
    let exact = c.tnames.len() == 1
        && c.args_by_tool
            .get(&g.gold_tool)
            .is_some_and(|a| args_equal(a, &g.gold_args));
    Indicators {
        acc: u8::from(exact),
        ftr: c.tnames.iter().filter(|t| **t != g.gold_tool).count(),
        tar: u8::from(c.is_empty()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tcp: Option<f64>,
    pub tcr: Option<f64>,
    pub pkp: Option<f64>,
    pub pkr: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Aligned pairs are the non-empty predictions that include the gold tool.
pub fn corpus_prf(corpus: &[(CallRecord, Reference)]) -> Result<Prf, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let (mut tool_hits, mut key_hits) = (0, 0);
    let (mut pred_tools, mut pred_keys, mut ref_tools, mut ref_keys) = (0, 0, 0, 0);
    for (c, g) in corpus {
        let c_keys = c.keys();
        pred_tools += c.tnames.len();
        pred_keys += c_keys.len();
        ref_tools += 1;
        ref_keys += g.gold_args.len();
        if !c.is_empty() && c.tnames.contains(&g.gold_tool) {
            tool_hits += 1;
            key_hits += g.gold_args.keys().filter(|k| c_keys.contains(k.as_str())).count();
        }
    }
    Ok(Prf {
        tcp: ratio(tool_hits, pred_tools),
        tcr: ratio(tool_hits, ref_tools),
        pkp: ratio(key_hits, pred_keys),
        pkr: ratio(key_hits, ref_keys),
    })
}

/// Map a rubric grade to a similarity: 1 -> 0, 2 -> 0.5, 3 -> 1.
pub fn grade_to_sim(grade: u8) -> Option<f64> {
    match grade {
        1 => Some(0.0),
        2 => Some(0.5),
        3 => Some(1.0),
        _ => None,
    }
}

/// Accepts `{"grade": n}` or a reply whose first digit is the grade.
pub fn parse_grade(reply: &str) -> Result<u8, MetricError> {
    let from_json = parse_json_reply(reply)
        .ok()
        .and_then(|v| v.get("grade").and_then(|g| g.as_u64()));
    let grade = from_json.or_else(|| reply.chars().find_map(|c| c.to_digit(10)).map(u64::from));
    match grade {
        Some(g @ 1..=3) => Ok(g as u8),
        _ => Err(MetricError::Grade(reply.trim().to_string())),
    }
}

fn public_line(m: &Message) -> String {
    match m {
        Message::User { content } => format!("User: {content}"),
        Message::Assistant(a) => format!("Assistant: {}", a.payload()),
    }
}

/// Mean mapped grade over the assistant turns. Thoughts are hidden from the judge, both in
/// the judged reply and in the history.
pub fn conv_relevancy(d: &DialogueTrace, judge: &LlmClient, seed: u64) -> Result<f64, MetricError> {
    let mut sims = Vec::new();
    for (i, m) in d.messages.iter().enumerate() {
        let Message::Assistant(a) = m else { continue };
        let history: Vec<String> = d.messages[..i].iter().map(public_line).collect();
        let prompt = prompts::JUDGE_CONVREL
            .render(&[("history", &history.join("\n")), ("reply", &a.payload())])
            .expect("convrel slots");
        let req = judge.request(vec![ChatMessage::user(prompt)], seeds::split(seed, &format!("convrel/{i}")));
        let grade = parse_grade(&judge.complete(&req)?)?;
        sims.push(grade_to_sim(grade).expect("grade in range"));
    }
    if sims.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Visible assistant utterances used for lexical metrics: the content of non-call,
/// well-formed turns. Tool-call payloads and thoughts are excluded.
pub fn visible_utterances(d: &DialogueTrace) -> impl Iterator<Item = &str> {
    d.assistant_turns()
        .filter(|a| !a.malformed && !a.has_calls())
        .map(|a| a.content.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexical {
    pub ttr: Option<f64>,
    pub ngd: BTreeMap<usize, Option<f64>>,
}

/// TTR and NGD_n over all visible assistant utterances. N-grams never cross utterances.
pub fn lexical_metrics(corpus: &[DialogueTrace]) -> Lexical {
    let utterances: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(visible_utterances)
        .map(tokenize)
        .collect();
    lexical_from_tokens(&utterances)
}

pub fn lexical_from_tokens(utterances: &[Vec<String>]) -> Lexical {
    let diversity = |n: usize| {
        let mut unique: HashSet<&[String]> = HashSet::new();
        let mut total = 0;
        for u in utterances {
            for gram in u.windows(n) {
                unique.insert(gram);
                total += 1;
            }
        }
        ratio(unique.len(), total)
    };
    Lexical {
        ttr: diversity(1),
        ngd: NGRAM_ORDERS.iter().map(|&n| (n, diversity(n))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRow {
    pub dialogue_id: String,
    pub acc: u8,
    pub ftr: usize,
    pub tar: u8,
    pub t_dagger: Option<usize>,
    pub conv_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dialogues: usize,
    pub acc: f64,
    pub ftr: f64,
    pub tar: f64,
    pub tcp: Option<f64>,
    pub tcr: Option<f64>,
    pub pkp: Option<f64>,
    pub pkr: Option<f64>,
    pub conv_rel: Option<f64>,
    pub ttr: Option<f64>,
    pub ngd: BTreeMap<usize, Option<f64>>,
    pub per_dialogue: Vec<DialogueRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "dialogues,acc,ftr,tar,tcp,tcr,pkp,pkr,conv_rel,ttr,ngd_2,ngd_3,ngd_4";

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{}",
            self.dialogues,
            cell(Some(self.acc)),
            cell(Some(self.ftr)),
            cell(Some(self.tar))
        );
        for v in [self.tcp, self.tcr, self.pkp, self.pkr, self.conv_rel, self.ttr] {
            write!(row, ",{}", cell(v)).expect("string write");
        }
        for n in NGRAM_ORDERS {
            write!(row, ",{}", cell(self.ngd.get(&n).copied().flatten())).expect("string write");
        }
        row
    }
}

/// Score a corpus. `conv_rel` holds one value per dialogue when a judge was run.
pub fn score(
    corpus: &[(DialogueTrace, Reference)],
    conv_rel: Option<&[f64]>,
) -> Result<MetricReport, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let records: Vec<(CallRecord, Reference)> =
        corpus.iter().map(|(d, g)| (extract_call(d), g.clone())).collect();
    let n = corpus.len() as f64;
    let mut rows = Vec::with_capacity(corpus.len());
    let (mut acc, mut ftr, mut tar) = (0usize, 0usize, 0usize);
    for (i, ((d, _), (c, g))) in corpus.iter().zip(&records).enumerate() {
        let ind = dialogue_indicators(c, g);
        acc += usize::from(ind.acc);
        ftr += ind.ftr;
        tar += usize::from(ind.tar);
        rows.push(DialogueRow {
            dialogue_id: d.id.clone(),
            acc: ind.acc,
            ftr: ind.ftr,
            tar: ind.tar,
            t_dagger: c.t_dagger,
            conv_rel: conv_rel.map(|v| v[i]),
        });
    }
    let prf = corpus_prf(&records)?;
    let traces: Vec<DialogueTrace> = corpus.iter().map(|(d, _)| d.clone()).collect();
    let lex = lexical_metrics(&traces);
    Ok(MetricReport {
        dialogues: corpus.len(),
        acc: acc as f64 / n,
        ftr: ftr as f64 / n,
        tar: tar as f64 / n,
        tcp: prf.tcp,
        tcr: prf.tcr,
        pkp: prf.pkp,
        pkr: prf.pkr,
        conv_rel: conv_rel.map(|v| v.iter().sum::<f64>() / v.len() as f64),
        ttr: lex.ttr,
        ngd: lex.ngd,
        per_dialogue: rows,
    })
}

/// Per-dialogue ConvRel for a corpus, computed concurrently, in corpus order.
pub fn conv_relevancy_all(
    corpus: &[(DialogueTrace, Reference)],
    judge: &LlmClient,
    seed: u64,
    workers: usize,
) -> Result<Vec<f64>, MetricError> {
    crate::pool::parallel_map(corpus, workers, |i, (d, _)| {
        conv_relevancy(d, judge, seeds::split(seed, &format!("dialogue/{i}")))
    })
    .into_iter()
    .collect()
}
