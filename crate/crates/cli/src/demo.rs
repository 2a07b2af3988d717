//! `forge demo <dir>`: writes a self-contained offline setup (transport catalogue, configs and
//! recorded transcripts) that `generate`, `validate`, `export`, `stats`, `score` and `bench`
//! replay without network access.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use forge_core::fixtures;
use forge_core::gateway::{BackendConfig, ChatBackend, FnBackend, GatewayError, LlmClient, Recorder, Transcript};

use crate::clients::ClientFactory;
use crate::commands;
use crate::config::{BenchConfig, PipelineConfig};
use crate::io::create_dir;
use crate::CliError;

pub const PIPELINE_TOML: &str = "pipeline.toml";
pub const BENCH_STATIC_TOML: &str = "bench-static.toml";
pub const BENCH_DYNAMIC_TOML: &str = "bench-dynamic.toml";

const ROLES: [&str; 11] = [
    "user", "assistant", "goal", "slots", "relevancy", "critique", "convrel", "eval-assistant", "generator", "voter", "judge",
];

fn scripted(role: &str, model: &str) -> String {
    format!("kind = \"scripted\"\nmodel_id = \"{model}\"\ntranscript = \"transcripts/{role}.json\"\n")
}

fn pipeline_toml() -> String {
    let mut s = String::from(
        "rng_seed = 2024\ncatalogue = \"catalogue.json\"\npersonas = \"personas.json\"\noutput_dir = \"out\"\nk = 5\nworkers = 4\n",
    );
    for (role, model) in [
        ("user", "user-proxy"),
        ("assistant", "assistant"),
        ("goal", "goal-writer"),
        ("slots", "slot-writer"),
        ("relevancy", "judge"),
        ("critique", "judge"),
        ("convrel", "rubric-judge"),
    ] {
        s.push_str(&format!("\n[backends.{role}]\n{}", scripted(role, model)));
    }
    s
}

fn bench_toml(mode: &str) -> String {
    let mut s = format!(
        "rng_seed = 7\ncatalogue = \"catalogue.json\"\nmode = \"{mode}\"\nscenarios = \"out/scenarios.jsonl\"\noutput_dir = \"out/bench-{mode}\"\nt_max = 6\nworkers = 4\n"
    );
    if mode == "static" {
        s.push_str("gold = \"out/corpus.jsonl\"\n");
    }
    s.push_str(&format!("\n[assistant]\n{}", scripted("eval-assistant", "candidate")));
    s.push_str(&format!("\n[judge]\n{}", scripted("judge", "rubric-judge")));
    if mode == "dynamic" {
        s.push_str("\n[voting]\nn_samples = 3\nm_voters = 3\nrng_seed = 11\n");
        s.push_str(&format!("\n[voting.generator]\n{}", scripted("generator", "user-proxy")));
        s.push_str(&format!("\n[voting.voter]\n{}", scripted("voter", "voter")));
    }
    s
}

fn agent(role: &str) -> FnBackend {
    match role {
        "user" => fixtures::user_backend(),
        "assistant" => fixtures::assistant_backend(),
        "goal" => fixtures::goal_backend(),
        "slots" => fixtures::slot_backend(),
        "relevancy" | "critique" => fixtures::judge_backend(),
        "convrel" | "judge" => fixtures::convrel_backend(),
        "eval-assistant" => fixtures::eval_assistant_backend(),
        "generator" => fixtures::voting_generator_backend(),
        "voter" => fixtures::voter_backend(),
        other => unreachable!("no scripted agent for role {other}"),
    }
}

/// Serves every role from a scripted agent and records the exchanges per transcript file.
#[derive(Default)]
pub struct RecordingFactory {
    transcripts: Mutex<BTreeMap<PathBuf, Arc<Mutex<Transcript>>>>,
}

impl ClientFactory for RecordingFactory {
    fn client(&self, role: &str, cfg: &BackendConfig, default_temperature: f64) -> Result<LlmClient, GatewayError> {
        let path = cfg.transcript.clone().ok_or_else(|| GatewayError::Config(format!("{role}: no transcript path")))?;
        let shared = self.transcripts.lock().expect("factory poisoned").entry(path).or_default().clone();
        let inner: Arc<dyn ChatBackend> = Arc::new(agent(role));
        Ok(LlmClient::from_parts(cfg, default_temperature, Arc::new(Recorder::new(inner, shared))))
    }
}

impl RecordingFactory {
    pub fn save(&self) -> Result<(), CliError> {
        for (path, t) in self.transcripts.lock().expect("factory poisoned").iter() {
            t.lock()
                .expect("transcript poisoned")
                .save(path)
                .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Write the demo setup into `dir` and record every transcript it needs.
pub fn init(dir: &Path) -> Result<(), CliError> {
    create_dir(&dir.join("transcripts"))?;
    write(&dir.join("catalogue.json"), &fixtures::transport_catalogue().to_json_string())?;
    write(&dir.join("personas.json"), &serde_json::to_string_pretty(&[fixtures::PERSONA]).expect("json"))?;
    for role in ROLES {
        write(&dir.join(format!("transcripts/{role}.json")), "{}")?;
    }
    write(&dir.join(PIPELINE_TOML), &pipeline_toml())?;
    write(&dir.join(BENCH_STATIC_TOML), &bench_toml("static"))?;
    write(&dir.join(BENCH_DYNAMIC_TOML), &bench_toml("dynamic"))?;

    let factory = RecordingFactory::default();
    let pipeline = PipelineConfig::load(&dir.join(PIPELINE_TOML))?;
    commands::generate(&pipeline, &factory, None)?;
    let paths = commands::CorpusPaths::resolve(&pipeline, None, None);
    commands::score_traces(&pipeline, &factory, &paths, true)?;
    for file in [BENCH_STATIC_TOML, BENCH_DYNAMIC_TOML] {
        commands::bench_run(&BenchConfig::load(&dir.join(file))?, &factory)?;
    }
    factory.save()?;
    std::fs::remove_dir_all(&pipeline.output_dir)
        .map_err(|source| CliError::Io { path: pipeline.output_dir.clone(), source })
}
