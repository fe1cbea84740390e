//! Command-line front end. `main` parses arguments, runs one subcommand
//! and returns the process exit code.

mod serve;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::adapter::Adapter;
use crate::agent::{run, telemetry_from_events, RunConfig, RunInputs, RunOutcome, RunStatus, EVENTS_FILE};
use crate::data::{Catalog, DataStrategy, ProcessingStats};
use crate::eval::{evaluate, Direction, EvalError, EvalOptions, MetricBinding, MetricRegistry, Phase, PredictionSet};
use crate::llm::{Gateway, Templates};
use crate::registry::{Capabilities, TaskRegistry, TaskSpec};
use crate::sandbox::events::{kind, read_events};
use crate::sandbox::{Clock, LogicalClock, Money, SystemClock};
use crate::validate::{validate_standalone, StandaloneRequest, ValidationOptions, Verdict};

pub use serve::{route, serve, Response};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;
pub const EXIT_WARNINGS: i32 = 10;
pub const EXIT_HARD_FAIL: i32 = 20;

#[derive(Debug, Parser)]
#[command(name = "ftloop", version, about = "Agent-driven fine-tuning loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the optimization loop for one or more tasks.
    Run(RunArgs),
    /// Validate a training config and data file without training.
    Validate(ValidateArgs),
    /// Score a prediction file against gold labels.
    Score(ScoreArgs),
    /// Recompute telemetry from a run's event stream.
    Report(ReportArgs),
    /// Serve task metadata and run reports over HTTP.
    Serve(ServeArgs),
    /// Check a task spec against the catalog and add it to the registry.
    Register(RegisterArgs),
}

#[derive(Debug, Args)]
pub struct Sources {
    /// Data catalog manifest.
    #[arg(long, default_value = "catalog.json")]
    pub catalog: PathBuf,
    /// Directory of task spec files.
    #[arg(long, default_value = "tasks")]
    pub registry: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task to run; repeat for concurrent runs.
    #[arg(long = "task", required = true)]
    pub tasks: Vec<String>,
    /// `mock`, `mock:delay=<ms>`, or a trainer command line.
    #[arg(long, default_value = "mock")]
    pub adapter: String,
    /// `scripted:<file>` or `http:<endpoints.json>`.
    #[arg(long)]
    pub llm: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Wall-clock budget in seconds, overriding the task's.
    #[arg(long)]
    pub wall_clock: Option<f64>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
    /// LLM spend cap, overriding the task's.
    #[arg(long)]
    pub spend_limit: Option<Money>,
    /// Directory of `<template-id>.txt` prompt overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Advance time by 1 ms per reading instead of using the system clock.
    #[arg(long)]
    pub logical_clock: bool,
    #[command(flatten)]
    pub sources: Sources,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "mock")]
    pub adapter: String,
    /// Require a multi-sentence reasoning chain in every output.
    #[arg(long)]
    pub requires_reasoning: bool,
    /// Processing stats of the data file, as JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Data strategy that produced the data file, as JSON.
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    /// Scratch directory for the mini run; a temporary one by default.
    #[arg(long)]
    pub work: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Lines of `{"instance_id", "output"}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Lines of `{"instance_id", "label"}`.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value = "accuracy")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A run directory, or its events file.
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory holding run directories.
    #[arg(long, default_value = "runs")]
    pub runs: PathBuf,
    #[command(flatten)]
    pub sources: Sources,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Task spec file to register.
    pub spec: PathBuf,
    #[command(flatten)]
    pub sources: Sources,
}

/// Parses `std::env::args` and runs the subcommand.
pub fn main() -> i32 {
    dispatch(Cli::parse())
}

pub fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::Register(a) => cmd_register(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn mock_exe() -> anyhow::Result<PathBuf> {
    std::env::current_exe().context("cannot locate the running executable")
}

/// Catalog, metrics and every registered task.
pub struct Environment {
    pub catalog: Catalog,
    pub metrics: Arc<MetricRegistry>,
    pub registry: TaskRegistry,
}

impl Environment {
    pub fn load(sources: &Sources, adapters: Vec<crate::adapter::AdapterDescriptor>) -> anyhow::Result<Self> {
        let catalog = Catalog::load_manifest(&sources.catalog)
            .with_context(|| format!("loading catalog {}", sources.catalog.display()))?;
        let metrics = Arc::new(MetricRegistry::with_builtins());
        let registry = TaskRegistry::new(Capabilities::assemble(adapters, &metrics));
        if sources.registry.exists() {
            registry.load_dir(&sources.registry, &catalog, &metrics)?;
        }
        Ok(Self {
            catalog,
            metrics,
            registry,
        })
    }
}

fn cmd_run(a: &RunArgs) -> anyhow::Result<i32> {
    let adapter = Adapter::from_spec(&a.adapter, &mock_exe()?)?;
    let env = Environment::load(&a.sources, vec![adapter.descriptor.clone()])?;
    let templates = match &a.templates {
        Some(dir) => Templates::builtin().with_overrides(dir)?,
        None => Templates::builtin(),
    };
    let mut jobs = Vec::new();
    for (i, task_id) in a.tasks.iter().enumerate() {
        let task = env.registry.get(task_id)?;
        let gateway = Gateway::from_spec(&a.llm)?.with_templates(templates.clone());
        let mut config = RunConfig::new(&a.out, a.seed);
        config.wall_clock = match a.wall_clock {
            Some(s) if !(s.is_finite() && s >= 0.0) => bail!("--wall-clock must be a non-negative number of seconds"),
            Some(s) => Some(Duration::from_secs_f64(s)),
            None => None,
        };
        config.max_train_samples = a.max_samples;
        config.max_iterations = a.max_iterations;
        config.spend_limit = a.spend_limit;
        config.clock = if a.logical_clock {
            Arc::new(LogicalClock::new(1)) as Arc<dyn Clock>
        } else {
            Arc::new(SystemClock::new())
        };
        if a.tasks[..i].contains(task_id) {
            bail!("task {task_id:?} given twice");
        }
        jobs.push((task, gateway, config));
    }

    let outcomes: Vec<anyhow::Result<RunOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(task, gateway, config)| {
                let inputs = RunInputs {
                    task,
                    catalog: &env.catalog,
                    metrics: env.metrics.clone(),
                    adapter: &adapter,
                    gateway,
                };
                s.spawn(move || run(inputs, config).map_err(anyhow::Error::from))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("run thread panicked"))))
            .collect()
    });

    let mut code = EXIT_OK;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                print!("{}", o.report.render());
                println!("report: {}", o.report_path().display());
                if o.report.status == RunStatus::Aborted && code == EXIT_OK {
                    code = EXIT_ABORTED;
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                code = EXIT_ERROR;
            }
        }
    }
    Ok(code)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_validate(a: &ValidateArgs) -> anyhow::Result<i32> {
    let adapter = Adapter::from_spec(&a.adapter, &mock_exe()?)?;
    let stats: Option<ProcessingStats> = a.stats.as_deref().map(read_json).transpose()?;
    let strategy: Option<DataStrategy> = a.strategy.as_deref().map(read_json).transpose()?;
    let (work_dir, scratch) = match &a.work {
        Some(w) => (w.clone(), false),
        None => (
            std::env::temp_dir().join(format!(
                "ftloop-validate-{}-{}",
                std::process::id(),
                SystemClock::new().now_ms()
            )),
            true,
        ),
    };
    let request = StandaloneRequest {
        config_path: &a.config,
        data_path: &a.data,
        adapter: &adapter,
        options: ValidationOptions {
            requires_reasoning_field: a.requires_reasoning,
            seed: a.seed,
            ..Default::default()
        },
        stats,
        strategy,
        work_dir: work_dir.clone(),
    };
    let result = validate_standalone(&request);
    if scratch {
        let _ = std::fs::remove_dir_all(&work_dir);
    }
    let (report, _) = result?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(match report.verdict {
        Verdict::Pass => EXIT_OK,
        Verdict::PassWithWarnings => EXIT_WARNINGS,
        Verdict::HardFail => EXIT_HARD_FAIL,
    })
}

#[derive(Debug, Deserialize)]
struct GoldLine {
    instance_id: String,
    #[serde(alias = "gold", alias = "output")]
    label: String,
}

/// Scores a prediction file; returns the aggregate of `metric`.
pub fn score_files(predictions: &Path, gold: &Path, metric: &str, metrics: &MetricRegistry) -> anyhow::Result<f64> {
    let text = std::fs::read_to_string(predictions).with_context(|| format!("reading {}", predictions.display()))?;
    let preds = PredictionSet::from_jsonl("", Phase::Validation, "", &text).map_err(anyhow::Error::msg)?;
    let text = std::fs::read_to_string(gold).with_context(|| format!("reading {}", gold.display()))?;
    let mut gold_map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let g: GoldLine = serde_json::from_str(line).with_context(|| format!("gold line {}", i + 1))?;
        if gold_map.insert(g.instance_id.clone(), g.label).is_some() {
            bail!(EvalError::DuplicateInstance(g.instance_id));
        }
    }
    let bindings = [MetricBinding::primary(metric, Direction::HigherIsBetter)];
    let fb = evaluate(&preds, &gold_map, &bindings, metrics, &[], &EvalOptions::default(), 0)?;
    let predicted: std::collections::BTreeSet<&str> = preds.items.iter().map(|p| p.instance_id.as_str()).collect();
    if let Some(missing) = gold_map.keys().find(|k| !predicted.contains(k.as_str())) {
        bail!(EvalError::MissingPrediction(missing.clone()));
    }
    Ok(fb.aggregate[metric])
}

fn cmd_score(a: &ScoreArgs) -> anyhow::Result<i32> {
    let value = score_files(&a.predictions, &a.gold, &a.metric, &MetricRegistry::with_builtins())?;
    println!("{}: {value:.6}", a.metric);
    Ok(EXIT_OK)
}

fn cmd_report(a: &ReportArgs) -> anyhow::Result<i32> {
    let path = if a.run.is_dir() { a.run.join(EVENTS_FILE) } else { a.run.clone() };
    let events = read_events(&path).with_context(|| format!("reading {}", path.display()))?;
    let telemetry = telemetry_from_events(&events)?;
    println!("{}", telemetry.render());
    println!("iter  decision           score   cost");
    for ev in events.iter().filter(|e| e.event == kind::ITERATION_END) {
        let d = &ev.detail;
        let score = d["score"].as_f64().map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>4}  {:<17}  {:>6}  {}",
            ev.iteration,
            d["decision"].as_str().unwrap_or("-"),
            score,
            d["cost"].as_str().unwrap_or("0")
        );
    }
    Ok(EXIT_OK)
}

fn cmd_serve(a: &ServeArgs) -> anyhow::Result<i32> {
    let env = Environment::load(&a.sources, Vec::new())?;
    serve(&a.addr, &env.registry, &a.runs)?;
    Ok(EXIT_OK)
}

fn cmd_register(a: &RegisterArgs) -> anyhow::Result<i32> {
    let env = Environment::load(&a.sources, Vec::new())?;
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let spec = TaskSpec::from_json(&text)?;
    let id = env.registry.register_task(spec.clone(), &env.catalog, &env.metrics)?;
    std::fs::create_dir_all(&a.sources.registry)?;
    let dest = a.sources.registry.join(format!("{id}.json"));
    std::fs::write(&dest, serde_json::to_string_pretty(&spec)?)?;
    println!("registered {id} at {}", dest.display());
    Ok(EXIT_OK)
}
