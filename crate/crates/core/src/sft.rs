//! Turn-sliced SFT export and corpus statistics.
//!
//! A dialogue with `T` assistant turns becomes `T` samples. Sample `t` has the context
//! `[system, u_1, a_1, ..., u_t]` and the target `a_t` in its wire form (thought included).
//! Masks are message-granular: only the target carries `learn = true`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalogue::Catalogue;
use crate::dialogue::{DialogueTrace, Message};
use crate::gateway::{ChatMessage, Role};
use crate::scenario::Scenario;

pub const SFT_FILE: &str = "sft.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT: &str = "chat-jsonl";

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("no scenario for dialogue `{0}`")]
    MissingScenario(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftSample {
    pub dialogue_id: String,
    /// 1-based assistant turn index.
    pub turn_index: usize,
    pub context: Vec<ChatMessage>,
    pub target: String,
}

/// One line of the export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub messages: Vec<MaskedMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMessage {
    pub role: Role,
    pub content: String,
    pub learn: bool,
}

impl SftSample {
    pub fn to_record(&self) -> SftRecord {
        let mut messages: Vec<MaskedMessage> = self
            .context
            .iter()
            .map(|m| MaskedMessage { role: m.role, content: m.content.clone(), learn: false })
            .collect();
        messages.push(MaskedMessage { role: Role::Assistant, content: self.target.clone(), learn: true });
        SftRecord { dialogue_id: self.dialogue_id.clone(), turn_index: self.turn_index, messages }
    }

    pub fn from_record(rec: SftRecord) -> Result<Self, String> {
        let learned = rec.messages.iter().filter(|m| m.learn).count();
        if learned != 1 {
            return Err(format!("{learned} messages carry learn=true, expected 1"));
        }
        let mut messages = rec.messages;
        let target = messages.pop().ok_or("no messages")?;
        if !target.learn || target.role != Role::Assistant {
            return Err("the learned message must be the final assistant message".into());
        }
        Ok(Self {
            dialogue_id: rec.dialogue_id,
            turn_index: rec.turn_index,
            context: messages.into_iter().map(|m| ChatMessage { role: m.role, content: m.content }).collect(),
            target: target.content,
        })
    }
}

/// One sample per assistant turn.
pub fn slice_dialogue(d: &DialogueTrace, sys_prompt: &str) -> Vec<SftSample> {
    let mut context = vec![ChatMessage::system(sys_prompt)];
    let mut out = Vec::new();
    for m in &d.messages {
        match m {
            Message::User { content } => context.push(ChatMessage::user(content.clone())),
            Message::Assistant(a) => {
                let target = a.render();
                out.push(SftSample {
                    dialogue_id: d.id.clone(),
                    turn_index: out.len() + 1,
                    context: context.clone(),
                    target: target.clone(),
                });
                context.push(ChatMessage::assistant(target));
            }
        }
    }
    out
}

/// System prompt for a trace: the reference assistant prompt over the tools it saw.
/// Falls back to the scenario pool when the trace records no candidates.
pub fn system_prompt_for(d: &DialogueTrace, scn: Option<&Scenario>, cat: &Catalogue) -> Result<String, crate::catalogue::CatalogueError> {
    let names = match (d.candidates.is_empty(), scn) {
        (true, Some(s)) => &s.pool,
        _ => &d.candidates,
    };
    let tools = names.iter().map(|n| cat.require(n)).collect::<Result<Vec<_>, _>>()?;
    Ok(crate::prompts::assistant_system(tools))
}

/// Fine-tuning settings recorded for documentation. Nothing here is executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyperparameters {
    pub executed: bool,
    pub method: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub learning_rate: f64,
    pub lr_schedule: String,
    pub epochs: u32,
    pub optimizer: String,
    pub precision: String,
    pub batch_size: u32,
    pub loss_masking: String,
}

impl Default for TrainingHyperparameters {
    fn default() -> Self {
        Self {
            executed: false,
            method: "LoRA".into(),
            lora_rank: 16,
            lora_alpha: 16,
            learning_rate: 1e-4,
            lr_schedule: "cosine".into(),
            epochs: 1,
            optimizer: "AdamW".into(),
            precision: "8-bit".into(),
            batch_size: 1,
            loss_masking: "final assistant message only".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub file: String,
    pub samples: usize,
    pub dialogues: usize,
    pub sha256: String,
    pub training: TrainingHyperparameters,
}

pub fn write_jsonl(samples: &[SftSample], path: &Path) -> Result<String, SftError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut hasher = Sha256::new();
    for s in samples {
        let mut line = serde_json::to_string(&s.to_record()).expect("record serializes");
        line.push('\n');
        hasher.update(line.as_bytes());
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(hex::encode(hasher.finalize()))
}

/// Write `sft.jsonl` and `manifest.json` into `dir`.
pub fn export(samples: &[SftSample], dir: &Path) -> Result<Manifest, SftError> {
    std::fs::create_dir_all(dir)?;
    let sha256 = write_jsonl(samples, &dir.join(SFT_FILE))?;
    let mut ids: Vec<&str> = samples.iter().map(|s| s.dialogue_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let manifest = Manifest {
        format: FORMAT.into(),
        file: SFT_FILE.into(),
        samples: samples.len(),
        dialogues: ids.len(),
        sha256,
        training: TrainingHyperparameters::default(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(manifest)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SftSample>, SftError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| SftError::Malformed { line: i + 1, reason };
        let rec: SftRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        out.push(SftSample::from_record(rec).map_err(malformed)?);
    }
    Ok(out)
}

pub type Histogram = BTreeMap<usize, usize>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub turns: Histogram,
    pub params: Histogram,
    pub disambiguation_turns: Histogram,
    pub param_filling_turns: Histogram,
}

impl CorpusStats {
    /// Long-format CSV: `histogram,bucket,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("histogram,bucket,count\n");
        for (name, h) in [
            ("turns", &self.turns),
            ("params", &self.params),
            ("disambiguation_turns", &self.disambiguation_turns),
            ("param_filling_turns", &self.param_filling_turns),
        ] {
            for (bucket, count) in h {
                writeln!(out, "{name},{bucket},{count}").expect("string write");
            }
        }
        out
    }
}

/// Parameter count of each scenario's seed tool, keyed by scenario id.
pub fn seed_param_counts(scenarios: &[Scenario], cat: &Catalogue) -> HashMap<String, usize> {
    scenarios
        .iter()
        .map(|s| {
            let n = cat.get(&s.seed_tool).map_or(s.gold_args.len(), |t| t.params.len());
            (s.id.clone(), n)
        })
        .collect()
}

/// Turns are user/assistant pairs. Disambiguation turns are the pairs up to the phase
/// boundary; parameter-filling turns are the remaining pairs.
pub fn compute_stats(corpus: &[DialogueTrace], param_counts: &HashMap<String, usize>) -> Result<CorpusStats, SftError> {
    let mut stats = CorpusStats { dialogues: corpus.len(), ..Default::default() };
    for d in corpus {
        let params = *param_counts
            .get(&d.scenario_id)
            .ok_or_else(|| SftError::MissingScenario(d.scenario_id.clone()))?;
        let turns = d.assistant_count();
        let disamb = d.phase_boundary.min(turns);
        *stats.turns.entry(turns).or_default() += 1;
        *stats.params.entry(params).or_default() += 1;
        *stats.disambiguation_turns.entry(disamb).or_default() += 1;
        *stats.param_filling_turns.entry(turns - disamb).or_default() += 1;
    }
    Ok(stats)
}
