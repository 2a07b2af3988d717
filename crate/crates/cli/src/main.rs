use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forge_cli::commands::{self, CorpusPaths, EXPORT_DIR};
use forge_cli::io::{write_json, write_jsonl};
use forge_cli::{demo, BenchConfig, CliError, LiveFactory, PipelineConfig};
use forge_core::metrics::MetricReport;

#[derive(Parser)]
#[command(name = "forge", version, about = "Synthesize, validate, export and evaluate tool-calling dialogues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// Dialogue file (JSON lines); defaults to the corpus in the output directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Scenario file (JSON lines); defaults to the one in the output directory.
    #[arg(long)]
    scenarios: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Catalogue utilities.
    Catalogue {
        #[command(subcommand)]
        command: CatalogueCommand,
    },
    /// Print the nearest distractors of a tool.
    Distractors {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        tool: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Build scenarios, synthesize dialogues and run the validator cascade.
    Generate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Comma-separated seed tools (default: the whole catalogue).
        #[arg(long, value_delimiter = ',')]
        tools: Option<Vec<String>>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-run the validator cascade on a corpus. Exits 1 if any dialogue is rejected.
    Validate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Skip the LLM judges.
        #[arg(long)]
        no_judges: bool,
        /// Write reports here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slice a corpus into masked SFT samples.
    Export {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus histograms (turns, parameters, phase lengths).
    Stats {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Also write the histograms as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score dialogues against their scenarios.
    Score {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Skip the conversational-relevancy judge.
        #[arg(long)]
        no_judge: bool,
        /// Write the full report (JSON) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an assistant backend.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Write an offline demo setup with recorded transcripts.
    Demo { dir: PathBuf },
}

#[derive(Subcommand)]
enum CatalogueCommand {
    /// Check that a catalogue file loads and is well-formed.
    Lint { path: PathBuf },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a benchmark config (TOML).
    Run { config: PathBuf },
    /// Summarize a finished benchmark directory.
    Report { dir: PathBuf },
}

fn pipeline(arg: &ConfigArg) -> Result<PipelineConfig, CliError> {
    Ok(PipelineConfig::load(&arg.config)?)
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn print_json<T: serde::Serialize>(v: &T) {
    emit(&serde_json::to_string_pretty(v).expect("value serializes"));
}

fn print_csv(r: &MetricReport) {
    emit(&format!("{}\n{}", MetricReport::CSV_HEADER, r.csv_row()));
}

fn paths(cfg: &PipelineConfig, a: CorpusArgs) -> CorpusPaths {
    CorpusPaths::resolve(cfg, a.corpus, a.scenarios)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Catalogue { command: CatalogueCommand::Lint { path } } => {
            emit(&format!("ok: {} tools", commands::lint_catalogue(&path)?));
        }
        Command::Distractors { cfg, tool, k } => {
            print_json(&commands::distractors(&pipeline(&cfg)?, &tool, k)?);
        }
        Command::Generate { cfg, tools, workers } => {
            let mut cfg = pipeline(&cfg)?;
            if let Some(w) = workers {
                cfg.workers = w.max(1);
            }
            let factory = LiveFactory::new(cfg.max_in_flight);
            print_json(&commands::generate(&cfg, &factory, tools.as_deref())?);
        }
        Command::Validate { cfg, corpus, no_judges, out } => {
            let cfg = pipeline(&cfg)?;
            let factory = LiveFactory::new(cfg.max_in_flight);
            let reports = commands::validate_corpus(&cfg, &factory, &paths(&cfg, corpus), !no_judges)?;
            match out {
                Some(p) => write_jsonl(&p, &reports)?,
                None => reports.iter().for_each(|r| emit(&serde_json::to_string(r).expect("report serializes"))),
            }
            let rejected = reports.iter().filter(|r| !r.accepted()).count();
            if rejected > 0 {
                return Err(CliError::Failed(format!("{rejected} of {} dialogues rejected", reports.len())));
            }
        }
        Command::Export { cfg, corpus, out } => {
            let cfg = pipeline(&cfg)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join(EXPORT_DIR));
            print_json(&commands::export_corpus(&cfg, &paths(&cfg, corpus), &out)?);
        }
        Command::Stats { cfg, corpus, csv } => {
            let cfg = pipeline(&cfg)?;
            let stats = commands::corpus_stats(&cfg, &paths(&cfg, corpus))?;
            if let Some(p) = csv {
                write_text(&p, &stats.to_csv())?;
            }
            print_json(&stats);
        }
        Command::Score { cfg, corpus, no_judge, out } => {
            let cfg = pipeline(&cfg)?;
            let factory = LiveFactory::new(cfg.max_in_flight);
            let report = commands::score_traces(&cfg, &factory, &paths(&cfg, corpus), !no_judge)?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            print_csv(&report);
        }
        Command::Bench { command: BenchCommand::Run { config } } => {
            let cfg = BenchConfig::load(&config)?;
            let factory = LiveFactory::new(cfg.max_in_flight);
            print_csv(&commands::bench_run(&cfg, &factory)?);
        }
        Command::Bench { command: BenchCommand::Report { dir } } => {
            emit(commands::bench_report(&dir)?.trim_end());
        }
        Command::Demo { dir } => {
            demo::init(&dir)?;
            emit(&format!("demo written to {}", dir.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(forge_cli::EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
