use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use forge_core::catalogue::Catalogue;
use forge_core::dialogue::{DialogueTrace, EngineError, LiveRetriever, Message, Synthesizer};
use forge_core::embed::Embedder;
use forge_core::eval::{Benchmark, EvalMode, EvalTask, VotingProxy};
use forge_core::metrics::{self, MetricReport, Reference};
use forge_core::pool::parallel_map;
use forge_core::retrieval::{DistractorSet, ToolIndex};
use forge_core::scenario::{PersonaStore, Scenario, ScenarioError, ScenarioSampler};
use forge_core::sft::{self, CorpusStats, Manifest};
use forge_core::validate::{self, Failure, Judges, ValidationError, ValidationReport};
use forge_core::seeds;
use serde::{Deserialize, Serialize};

use crate::clients::{build_client, build_embedder, ClientFactory, GENERATIVE_TEMPERATURE, GREEDY_TEMPERATURE};
use crate::config::{BenchConfig, ConfigError, PipelineConfig};
use crate::io::{create_dir, read_json, read_jsonl, write_json, write_jsonl};
use crate::CliError;

pub const SCENARIOS_FILE: &str = "scenarios.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";
/// Full validation reports, including wall-clock stage timings.
pub const REPORTS_FILE: &str = "validation.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EXPORT_DIR: &str = "sft";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const AUDIT_DIR: &str = "audit";

pub fn load_catalogue(path: &Path) -> Result<Catalogue, CliError> {
    Catalogue::load(path).map_err(|e| CliError::Setup(format!("catalogue: {e}")))
}

/// Catalogue, embedder and tool index shared by the pipeline commands.
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub catalogue: Catalogue,
    pub embedder: Arc<dyn Embedder>,
    pub index: ToolIndex,
}

impl Workspace {
    pub fn open(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let catalogue = load_catalogue(&cfg.catalogue)?;
        let embedder = build_embedder(&cfg.embedder)?;
        let index = ToolIndex::build(&catalogue, embedder.as_ref())
            .map_err(|e| CliError::Setup(format!("embedding catalogue: {e}")))?;
        Ok(Self { cfg: cfg.clone(), catalogue, embedder, index })
    }

    pub fn personas(&self) -> Result<PersonaStore, CliError> {
        let store = match &self.cfg.personas {
            Some(p) => PersonaStore::load(p, self.embedder.clone()),
            None => PersonaStore::bundled(self.embedder.clone()),
        };
        store.map_err(|e| CliError::Setup(e.to_string()))
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.cfg.output_dir.join(file)
    }
}

pub fn lint_catalogue(path: &Path) -> Result<usize, CliError> {
    Catalogue::load(path)
        .map(|c| c.len())
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn distractors(cfg: &PipelineConfig, tool: &str, k: Option<usize>) -> Result<DistractorSet, CliError> {
    let ws = Workspace::open(cfg)?;
    ws.index
        .nearest_distractors(tool, k.unwrap_or(cfg.k))
        .map_err(|e| CliError::Failed(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scenario,
    Synthesis,
    Validation,
    /// Infrastructure failure (backend unavailable, transcript miss).
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub scenario_id: String,
    pub seed_tool: String,
    pub stage: Stage,
    /// Short machine-readable cause, e.g. `wrong_tool` or `toolargs`.
    pub reason: String,
    pub detail: String,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default)]
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub seed_tools: usize,
    pub scenarios: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejection counts keyed by `stage/reason`.
    pub rejections: BTreeMap<String, usize>,
}

#[derive(Default)]
struct Outcome {
    scenario: Option<Scenario>,
    accepted: Option<DialogueTrace>,
    rejected: Option<RejectedRecord>,
    report: Option<ValidationReport>,
}

struct Generator<'a> {
    ws: &'a Workspace,
    sampler: ScenarioSampler<'a>,
    synth: Synthesizer<'a>,
    judges: Option<&'a Judges>,
}

fn scenario_reason(e: &ScenarioError) -> (Stage, &'static str) {
    match e {
        ScenarioError::GoalLeak { .. } => (Stage::Scenario, "goal_leak"),
        ScenarioError::SlotMismatch { .. } => (Stage::Scenario, "slot_mismatch"),
        ScenarioError::Personas(_) => (Stage::Scenario, "personas"),
        ScenarioError::Gateway(_) => (Stage::Error, "gateway"),
        _ => (Stage::Error, "setup"),
    }
}

impl Generator<'_> {
    fn run(&self, tool: &str) -> Outcome {
        let rng_seed = seeds::split(self.ws.cfg.rng_seed, &format!("scenario/{tool}"));
        let reject = |stage, reason: &str, detail: String| RejectedRecord {
            scenario_id: Scenario::make_id(tool, rng_seed),
            seed_tool: tool.to_string(),
            stage,
            reason: reason.to_string(),
            detail,
            failures: vec![],
            messages: vec![],
        };
        let scn = match self.sampler.build(tool, rng_seed) {
            Ok(s) => s,
            Err(e) => {
                let (stage, reason) = scenario_reason(&e);
                match stage {
                    Stage::Error => log::warn!("{tool}: scenario error: {e}"),
                    _ => log::info!("{tool}: scenario rejected: {e}"),
                }
                return Outcome { rejected: Some(reject(stage, reason, e.to_string())), ..Default::default() };
            }
        };
        let trace = match self.synth.synthesize(&scn) {
            Ok(t) => t,
            Err(EngineError::Rejected(r)) => {
                log::info!("{}: synthesis rejected: {}", scn.id, r.detail);
                let reason = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let mut rec = reject(Stage::Synthesis, &reason, r.detail);
                rec.messages = r.partial;
                return Outcome { scenario: Some(scn), rejected: Some(rec), ..Default::default() };
            }
            Err(e) => {
                log::warn!("{}: synthesis error: {e}", scn.id);
                return Outcome { scenario: Some(scn), rejected: Some(reject(Stage::Error, "synthesis", e.to_string())), ..Default::default() };
            }
        };
        match validate::run_cascade(&trace, &scn, &self.ws.catalogue, self.judges) {
            Ok(report) if report.accepted() => {
                Outcome { scenario: Some(scn), accepted: Some(trace), report: Some(report), ..Default::default() }
            }
            Ok(report) => {
                let first = &report.failures[0];
                let mut rec = reject(Stage::Validation, &first.validator, first.reason.clone());
                rec.failures = report.failures.clone();
                rec.messages = trace.messages;
                Outcome { scenario: Some(scn), rejected: Some(rec), report: Some(report), ..Default::default() }
            }
            Err(e) => {
                log::warn!("{}: validation error: {e}", scn.id);
                let reason = match &e {
                    ValidationError::Infrastructure { validator, .. } => *validator,
                    ValidationError::Catalogue(_) => "catalogue",
                };
                let mut rec = reject(Stage::Error, reason, e.to_string());
                rec.messages = trace.messages;
                Outcome { scenario: Some(scn), rejected: Some(rec), ..Default::default() }
            }
        }
    }
}

/// Scenario -> synthesis -> cascade for every seed tool. Outputs follow seed-tool order, so
/// they do not depend on the worker count.
pub fn generate(cfg: &PipelineConfig, factory: &dyn ClientFactory, only: Option<&[String]>) -> Result<Summary, CliError> {
    let ws = Workspace::open(cfg)?;
    let seed_tools: Vec<String> = match only {
        Some(names) => {
            for n in names {
                if ws.catalogue.get(n).is_none() {
                    return Err(ConfigError::Invalid(format!("unknown seed tool `{n}`")).into());
                }
            }
            names.to_vec()
        }
        None => ws.catalogue.iter().map(|t| t.name.clone()).collect(),
    };
    let b = &cfg.backends;
    let user = build_client(factory, "user", &b.user, GENERATIVE_TEMPERATURE)?;
    let assistant = build_client(factory, "assistant", &b.assistant, GENERATIVE_TEMPERATURE)?;
    let goal = build_client(factory, "goal", &b.goal, GENERATIVE_TEMPERATURE)?;
    let slots = build_client(factory, "slots", &b.slots, GENERATIVE_TEMPERATURE)?;
    let judges = match (&b.relevancy, &b.critique) {
        (Some(r), Some(c)) => Some(Judges {
            relevancy: build_client(factory, "relevancy", r, GREEDY_TEMPERATURE)?,
            critique: build_client(factory, "critique", c, GREEDY_TEMPERATURE)?,
        }),
        _ => None,
    };
    let personas = ws.personas()?;
    let generator = Generator {
        ws: &ws,
        sampler: ScenarioSampler {
            catalogue: &ws.catalogue,
            index: &ws.index,
            personas: &personas,
            goal_client: &goal,
            slot_client: &slots,
            k: cfg.k,
            persona_k: cfg.persona_k,
        },
        synth: Synthesizer {
            catalogue: &ws.catalogue,
            retriever: LiveRetriever { index: &ws.index, embedder: ws.embedder.as_ref() },
            user: &user,
            assistant: &assistant,
            config: cfg.engine(),
        },
        judges: judges.as_ref(),
    };
    let outcomes = parallel_map(&seed_tools, cfg.workers, |_, tool| generator.run(tool));

    let mut summary = Summary { seed_tools: seed_tools.len(), ..Default::default() };
    let (mut scenarios, mut corpus, mut rejected, mut reports) = (vec![], vec![], vec![], vec![]);
    for o in outcomes {
        scenarios.extend(o.scenario);
        corpus.extend(o.accepted);
        reports.extend(o.report);
        if let Some(r) = o.rejected {
            let stage = serde_json::to_value(r.stage).expect("stage serializes");
            *summary.rejections.entry(format!("{}/{}", stage.as_str().unwrap_or("?"), r.reason)).or_default() += 1;
            rejected.push(r);
        }
    }
    summary.scenarios = scenarios.len();
    summary.accepted = corpus.len();
    summary.rejected = rejected.len();

    create_dir(&cfg.output_dir)?;
    write_jsonl(&ws.out(SCENARIOS_FILE), &scenarios)?;
    write_jsonl(&ws.out(CORPUS_FILE), &corpus)?;
    write_jsonl(&ws.out(REJECTED_FILE), &rejected)?;
    write_jsonl(&ws.out(REPORTS_FILE), &reports)?;
    write_json(&ws.out(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn scenario_map(path: &Path) -> Result<HashMap<String, Scenario>, CliError> {
    Ok(read_jsonl::<Scenario>(path)?.into_iter().map(|s| (s.id.clone(), s)).collect())
}

fn scenario_for<'m>(map: &'m HashMap<String, Scenario>, d: &DialogueTrace) -> Result<&'m Scenario, CliError> {
    map.get(&d.scenario_id)
        .ok_or_else(|| CliError::Data(format!("dialogue `{}` has no scenario `{}`", d.id, d.scenario_id)))
}

/// Inputs of the corpus-level commands; defaults live in the configured output directory.
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub corpus: PathBuf,
    pub scenarios: PathBuf,
}

impl CorpusPaths {
    pub fn resolve(cfg: &PipelineConfig, corpus: Option<PathBuf>, scenarios: Option<PathBuf>) -> Self {
        Self {
            corpus: corpus.unwrap_or_else(|| cfg.output_dir.join(CORPUS_FILE)),
            scenarios: scenarios.unwrap_or_else(|| cfg.output_dir.join(SCENARIOS_FILE)),
        }
    }
}

/// Re-run the cascade over a corpus. Use [`ValidationReport::accepted`] to decide the exit code.
pub fn validate_corpus(
    cfg: &PipelineConfig,
    factory: &dyn ClientFactory,
    paths: &CorpusPaths,
    with_judges: bool,
) -> Result<Vec<ValidationReport>, CliError> {
    let catalogue = load_catalogue(&cfg.catalogue)?;
    let scenarios = scenario_map(&paths.scenarios)?;
    let corpus: Vec<DialogueTrace> = read_jsonl(&paths.corpus)?;
    let judges = match (&cfg.backends.relevancy, &cfg.backends.critique, with_judges) {
        (Some(r), Some(c), true) => Some(Judges {
            relevancy: build_client(factory, "relevancy", r, GREEDY_TEMPERATURE)?,
            critique: build_client(factory, "critique", c, GREEDY_TEMPERATURE)?,
        }),
        _ => None,
    };
    let results = parallel_map(&corpus, cfg.workers, |_, d| {
        let scn = scenario_for(&scenarios, d)?;
        validate::run_cascade(d, scn, &catalogue, judges.as_ref()).map_err(|e| CliError::Failed(format!("{}: {e}", d.id)))
    });
    results.into_iter().collect()
}

pub fn export_corpus(cfg: &PipelineConfig, paths: &CorpusPaths, out_dir: &Path) -> Result<Manifest, CliError> {
    let catalogue = load_catalogue(&cfg.catalogue)?;
    let scenarios = scenario_map(&paths.scenarios)?;
    let corpus: Vec<DialogueTrace> = read_jsonl(&paths.corpus)?;
    let mut samples = Vec::new();
    for d in &corpus {
        let scn = scenario_for(&scenarios, d)?;
        let system = sft::system_prompt_for(d, Some(scn), &catalogue).map_err(|e| CliError::Data(format!("{}: {e}", d.id)))?;
        samples.extend(sft::slice_dialogue(d, &system));
    }
    sft::export(&samples, out_dir).map_err(|e| CliError::Failed(format!("export: {e}")))
}

pub fn corpus_stats(cfg: &PipelineConfig, paths: &CorpusPaths) -> Result<CorpusStats, CliError> {
    let catalogue = load_catalogue(&cfg.catalogue)?;
    let scenarios: Vec<Scenario> = read_jsonl(&paths.scenarios)?;
    let corpus: Vec<DialogueTrace> = read_jsonl(&paths.corpus)?;
    let counts = sft::seed_param_counts(&scenarios, &catalogue);
    sft::compute_stats(&corpus, &counts).map_err(|e| CliError::Data(e.to_string()))
}

/// Score traces against the scenario references. The rubric judge runs when configured and
/// `with_judge` is set.
pub fn score_traces(
    cfg: &PipelineConfig,
    factory: &dyn ClientFactory,
    paths: &CorpusPaths,
    with_judge: bool,
) -> Result<MetricReport, CliError> {
    let scenarios = scenario_map(&paths.scenarios)?;
    let traces: Vec<DialogueTrace> = read_jsonl(&paths.corpus)?;
    let corpus = traces
        .into_iter()
        .map(|d| Ok((Reference::from(scenario_for(&scenarios, &d)?), d)))
        .map(|r: Result<_, CliError>| r.map(|(g, d)| (d, g)))
        .collect::<Result<Vec<_>, _>>()?;
    let conv = match (&cfg.backends.convrel, with_judge) {
        (Some(j), true) => {
            let judge = build_client(factory, "convrel", j, GREEDY_TEMPERATURE)?;
            let seed = seeds::split(cfg.rng_seed, "score");
            Some(metrics::conv_relevancy_all(&corpus, &judge, seed, cfg.workers).map_err(|e| CliError::Failed(e.to_string()))?)
        }
        _ => None,
    };
    metrics::score(&corpus, conv.as_deref()).map_err(|e| CliError::Failed(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub scenario: Scenario,
    pub excluded: bool,
    pub trace: DialogueTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<DialogueTrace>,
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

pub fn bench_tasks(cfg: &BenchConfig) -> Result<Vec<EvalTask>, CliError> {
    let scenarios: Vec<Scenario> = read_jsonl(&cfg.scenarios)?;
    match cfg.mode {
        EvalMode::Dynamic => Ok(scenarios.into_iter().map(EvalTask::rollout).collect()),
        EvalMode::Static => {
            let gold_path = cfg.gold.as_ref().expect("validated");
            let mut gold: HashMap<String, DialogueTrace> = read_jsonl::<DialogueTrace>(gold_path)?
                .into_iter()
                .map(|d| (d.scenario_id.clone(), d))
                .collect();
            let mut tasks = Vec::new();
            for s in scenarios {
                match gold.remove(&s.id) {
                    Some(d) => tasks.push(EvalTask::fixed(s, d)),
                    None => log::info!("{}: no gold dialogue, skipped in static mode", s.id),
                }
            }
            Ok(tasks)
        }
    }
}

/// Run a benchmark and write traces, report and per-dialogue audit files.
pub fn bench_run(cfg: &BenchConfig, factory: &dyn ClientFactory) -> Result<MetricReport, CliError> {
    let catalogue = load_catalogue(&cfg.catalogue)?;
    let tasks = bench_tasks(cfg)?;
    let assistant = build_client(factory, "assistant", &cfg.assistant, GREEDY_TEMPERATURE)?;
    let proxy = match (&cfg.voting, cfg.mode) {
        (Some(v), EvalMode::Dynamic) => Some(VotingProxy {
            generator: build_client(factory, "generator", &v.generator, GENERATIVE_TEMPERATURE)?,
            voter: build_client(factory, "voter", &v.voter, GREEDY_TEMPERATURE)?,
            n_samples: v.n_samples,
            m_voters: v.m_voters,
            rng_seed: v.rng_seed,
        }),
        _ => None,
    };
    let judge = cfg
        .judge
        .as_ref()
        .map(|j| build_client(factory, "judge", j, GREEDY_TEMPERATURE))
        .transpose()?;
    let bench = Benchmark {
        catalogue: &catalogue,
        assistant: &assistant,
        proxy: proxy.as_ref(),
        judge: judge.as_ref(),
        t_max: cfg.t_max,
        workers: cfg.workers,
        exclude: cfg.exclude.iter().cloned().collect::<HashSet<_>>(),
        seed: cfg.rng_seed,
    };
    let outcome = bench.run(&tasks).map_err(|e| CliError::Failed(format!("benchmark: {e}")))?;

    let audit = cfg.output_dir.join(AUDIT_DIR);
    create_dir(&audit)?;
    write_jsonl(&cfg.output_dir.join(TRACES_FILE), &outcome.traces)?;
    write_json(&cfg.output_dir.join(REPORT_JSON), &outcome.report)?;
    let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, outcome.report.csv_row());
    std::fs::write(cfg.output_dir.join(REPORT_CSV), csv)
        .map_err(|source| CliError::Io { path: cfg.output_dir.join(REPORT_CSV), source })?;
    for (i, (task, trace)) in tasks.iter().zip(&outcome.traces).enumerate() {
        let rec = AuditRecord {
            scenario: task.scenario.clone(),
            excluded: bench.exclude.contains(&task.scenario.id),
            trace: trace.clone(),
            gold: task.gold_dialogue.clone(),
        };
        write_json(&audit.join(format!("{i:04}_{}.json", file_safe(&task.scenario.id))), &rec)?;
    }
    Ok(outcome.report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Human-readable summary of a finished benchmark directory.
pub fn bench_report(dir: &Path) -> Result<String, CliError> {
    let r: MetricReport = read_json(&dir.join(REPORT_JSON))?;
    let mut out = format!(
        "dialogues {}\nacc {:.4}  ftr {:.4}  tar {:.4}\ntcp {}  tcr {}  pkp {}  pkr {}\nconv_rel {}  ttr {}",
        r.dialogues,
        r.acc,
        r.ftr,
        r.tar,
        fmt_opt(r.tcp),
        fmt_opt(r.tcr),
        fmt_opt(r.pkp),
        fmt_opt(r.pkr),
        fmt_opt(r.conv_rel),
        fmt_opt(r.ttr),
    );
    for (n, v) in &r.ngd {
        out.push_str(&format!("  ngd_{n} {}", fmt_opt(*v)));
    }
    out.push('\n');
    for row in &r.per_dialogue {
        out.push_str(&format!(
            "{}\tacc={} ftr={} tar={} t={}\n",
            row.dialogue_id,
            row.acc,
            row.ftr,
            row.tar,
            row.t_dagger.map_or_else(|| "-".into(), |t| t.to_string())
        ));
    }
    Ok(out)
}
