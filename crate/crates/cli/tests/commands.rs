use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use forge_cli::commands::{self, CorpusPaths, Stage};
use forge_cli::demo::{self, PIPELINE_TOML};
use forge_cli::{ClientFactory, PipelineConfig};
use forge_core::dialogue::DialogueTrace;
use forge_core::fixtures;
use forge_core::gateway::{BackendConfig, GatewayError, LlmClient};

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn demo_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    demo::init(dir.path()).unwrap();
    dir
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn single_seed_generates_one_accepted_dialogue() {
    let dir = demo_dir();
    let out = forge(dir.path(), &["generate", "-c", PIPELINE_TOML, "--tools", fixtures::SEED_TOOL]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["accepted"], 1);
    assert_eq!(summary["rejected"], 0);
    let corpus = read(dir.path().join("out/corpus.jsonl"));
    let trace: DialogueTrace = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    let call = &trace.last_assistant().unwrap().calls()[0];
    assert_eq!(serde_json::Value::Object(call.args.clone()), serde_json::json!({"nodeId": 437292, "transportRequestId": 957841}));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = demo_dir();
    let mut runs = Vec::new();
    for workers in ["1", "4"] {
        let out = forge(dir.path(), &["generate", "-c", PIPELINE_TOML, "--workers", workers]);
        assert!(out.status.success());
        let files: Vec<String> = ["scenarios.jsonl", "corpus.jsonl", "rejected.jsonl", "summary.json"]
            .iter()
            .map(|f| read(dir.path().join("out").join(f)))
            .collect();
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0][2].lines().count(), 9);
}

/// Serves each role from a fixture agent; the assistant commits to a distractor.
struct WrongToolFactory;

impl ClientFactory for WrongToolFactory {
    fn client(&self, role: &str, cfg: &BackendConfig, t: f64) -> Result<LlmClient, GatewayError> {
        let backend = match role {
            "user" => fixtures::user_backend(),
            "assistant" => fixtures::wrong_tool_assistant_backend(),
            "goal" => fixtures::goal_backend(),
            "slots" => fixtures::slot_backend(),
            _ => fixtures::judge_backend(),
        };
        Ok(LlmClient::from_parts(cfg, t, Arc::new(backend)))
    }
}

#[test]
fn wrong_tool_assistant_yields_only_rejections() {
    let dir = demo_dir();
    let cfg = PipelineConfig::load(&dir.path().join(PIPELINE_TOML)).unwrap();
    let summary = commands::generate(&cfg, &WrongToolFactory, Some(&[fixtures::SEED_TOOL.to_string()])).unwrap();
    assert_eq!((summary.accepted, summary.rejected), (0, 1));
    let rejected: Vec<commands::RejectedRecord> =
        forge_cli::io::read_jsonl(&cfg.output_dir.join(commands::REJECTED_FILE)).unwrap();
    assert_eq!(rejected[0].stage, Stage::Synthesis);
    assert_eq!(rejected[0].reason, "wrong_tool");
}

#[test]
fn validate_exits_one_on_a_bad_dialogue() {
    let dir = demo_dir();
    assert!(forge(dir.path(), &["generate", "-c", PIPELINE_TOML]).status.success());
    let ok = forge(dir.path(), &["validate", "-c", PIPELINE_TOML, "--no-judges"]);
    assert_eq!(ok.status.code(), Some(0));

    let corpus = dir.path().join("out/corpus.jsonl");
    let tampered = read(corpus.clone()).replace("957841", "111111");
    std::fs::write(&corpus, tampered).unwrap();
    let bad = forge(dir.path(), &["validate", "-c", PIPELINE_TOML, "--no-judges"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["failures"][0]["validator"], "toolargs");
}

#[test]
fn config_errors_exit_two() {
    let dir = demo_dir();
    let cfg = read(dir.path().join(PIPELINE_TOML)).replace("rng_seed = 2024\n", "");
    std::fs::write(dir.path().join("noseed.toml"), cfg).unwrap();
    assert_eq!(forge(dir.path(), &["generate", "-c", "noseed.toml"]).status.code(), Some(2));
    assert_eq!(forge(dir.path(), &["generate", "-c", "missing.toml"]).status.code(), Some(2));
    let out = forge(dir.path(), &["generate", "-c", PIPELINE_TOML, "--tools", "no_such_tool"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_and_score_on_the_demo_corpus() {
    let dir = demo_dir();
    assert!(forge(dir.path(), &["generate", "-c", PIPELINE_TOML]).status.success());
    let cfg = PipelineConfig::load(&dir.path().join(PIPELINE_TOML)).unwrap();
    let paths = CorpusPaths::resolve(&cfg, None, None);

    let stats = commands::corpus_stats(&cfg, &paths).unwrap();
    // One dialogue: three pairs, two of them before the selection commit, two-parameter seed.
    assert_eq!(stats.turns.into_iter().collect::<Vec<_>>(), vec![(3, 1)]);
    assert_eq!(stats.params.into_iter().collect::<Vec<_>>(), vec![(2, 1)]);
    assert_eq!(stats.disambiguation_turns.into_iter().collect::<Vec<_>>(), vec![(2, 1)]);
    assert_eq!(stats.param_filling_turns.into_iter().collect::<Vec<_>>(), vec![(1, 1)]);

    let out = forge(dir.path(), &["score", "-c", PIPELINE_TOML, "--out", "score.json"]);
    assert!(out.status.success());
    let report: forge_core::MetricReport = serde_json::from_str(&read(dir.path().join("score.json"))).unwrap();
    assert_eq!((report.acc, report.ftr, report.tar), (1.0, 0.0, 0.0));
    assert_eq!((report.tcp, report.pkp, report.pkr), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(report.conv_rel, Some(1.0));
}

#[test]
fn bench_runs_replay_and_report() {
    let dir = demo_dir();
    assert!(forge(dir.path(), &["generate", "-c", PIPELINE_TOML]).status.success());
    for cfg in [demo::BENCH_STATIC_TOML, demo::BENCH_DYNAMIC_TOML] {
        let out = forge(dir.path(), &["bench", "run", cfg]);
        assert!(out.status.success(), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let audit = std::fs::read_dir(dir.path().join("out/bench-dynamic/audit")).unwrap().count();
    assert_eq!(audit, 3);
    let report = forge(dir.path(), &["bench", "report", "out/bench-static"]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.starts_with("dialogues 1\nacc 1.0000"), "{text}");
}
