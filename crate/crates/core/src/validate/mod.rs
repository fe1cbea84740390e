//! Progressive fail-fast validation: static checks, a data-format check plus
//! adapter mini run, and runtime sanity over the mini run's telemetry.
//! Each stage runs only when every earlier stage passed.

mod config;
mod runner;
mod standalone;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{ConfigViolation, TrainMethod, TrainingConfig};
pub use standalone::{validate_standalone, StandaloneError, StandaloneRequest};
pub use runner::{MiniRunOutcome, MiniRunner, SandboxMiniRunner, MINI_TIMEOUT};

use crate::adapter::{resolve_program, AdapterDescriptor, EXIT_DATA_ERROR, EXIT_NUMERICAL_ERROR};
use crate::data::{DataError, DataRecord, DataStrategy, ProcessingStats};
use crate::eval::LossPoint;
use crate::sandbox::events::{kind, Event};

/// Stable diagnostic codes.
pub mod code {
    pub const CONFIG_RANGE: &str = "CONFIG_RANGE";
    pub const PATH_MISSING: &str = "PATH_MISSING";
    pub const EMPTY_DATASET: &str = "EMPTY_DATASET";
    pub const HIGH_FILTER_RATE: &str = "HIGH_FILTER_RATE";
    pub const SKEWED_DISTRIBUTION: &str = "SKEWED_DISTRIBUTION";
    pub const EXPLODING_LOSS: &str = "EXPLODING_LOSS";
    pub const INVALID_GRADIENTS: &str = "INVALID_GRADIENTS";
    pub const FORMAT_VIOLATION: &str = "FORMAT_VIOLATION";
    /// The adapter's mini mode failed for a reason other than bad data or
    /// numerics (resource error, timeout, missing outputs).
    pub const MINI_RUN_FAILED: &str = "MINI_RUN_FAILED";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Static,
    MiniRun,
    RuntimeSanity,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Static, Stage::MiniRun, Stage::RuntimeSanity];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Static => "static",
            Stage::MiniRun => "mini_run",
            Stage::RuntimeSanity => "runtime_sanity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub severity: Severity,
    pub message: String,
    pub locus: String,
    pub stage: Stage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub status: StageStatus,
    pub diagnostics: Vec<Diagnostic>,
}

impl StageResult {
    fn from_diagnostics(stage: Stage, diagnostics: Vec<Diagnostic>) -> Self {
        let failed = diagnostics.iter().any(|d| d.severity == Severity::Hard);
        Self {
            stage,
            status: if failed { StageStatus::Fail } else { StageStatus::Pass },
            diagnostics,
        }
    }

    fn skipped(stage: Stage) -> Self {
        Self {
            stage,
            status: StageStatus::Skipped,
            diagnostics: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    PassWithWarnings,
    HardFail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::PassWithWarnings => "pass_with_warnings",
            Verdict::HardFail => "hard_fail",
        }
    }

    pub fn allows_training(self) -> bool {
        self != Verdict::HardFail
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub stages: Vec<StageResult>,
    pub verdict: Verdict,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn from_stages(stages: Vec<StageResult>) -> Self {
        let diagnostics: Vec<Diagnostic> = stages.iter().flat_map(|s| s.diagnostics.clone()).collect();
        let verdict = if diagnostics.iter().any(|d| d.severity == Severity::Hard) {
            Verdict::HardFail
        } else if diagnostics.is_empty() {
            Verdict::Pass
        } else {
            Verdict::PassWithWarnings
        };
        Self {
            stages,
            verdict,
            diagnostics,
        }
    }

    /// First stage with status `fail`.
    pub fn failed_stage(&self) -> Option<Stage> {
        self.stages.iter().find(|s| s.status == StageStatus::Fail).map(|s| s.stage)
    }

    pub fn codes(&self) -> Vec<&str> {
        self.diagnostics.iter().map(|d| d.code.as_str()).collect()
    }

    pub fn hard(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Hard)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Soft)
    }
}

/// Thresholds and task flags for validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub requires_reasoning_field: bool,
    pub sample_size: usize,
    pub seed: u64,
    pub min_retention: f64,
    pub max_majority_share: f64,
    pub explode_ratio: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            requires_reasoning_field: false,
            sample_size: 16,
            seed: 0,
            min_retention: 0.10,
            max_majority_share: 0.9,
            explode_ratio: 10.0,
        }
    }
}

/// Adapter as seen by the static stage: its argv and, when `--describe`
/// succeeded at startup, its self-description.
#[derive(Clone, Copy, Debug)]
pub struct AdapterRef<'a> {
    pub argv: &'a [String],
    pub descriptor: Option<&'a AdapterDescriptor>,
}

impl<'a> From<&'a crate::adapter::Adapter> for AdapterRef<'a> {
    fn from(a: &'a crate::adapter::Adapter) -> Self {
        AdapterRef {
            argv: &a.argv,
            descriptor: Some(&a.descriptor),
        }
    }
}

/// Everything one validation looks at.
#[derive(Clone, Copy, Debug)]
pub struct ValidationInput<'a> {
    /// Raw training-config document.
    pub config: &'a Value,
    pub data_path: &'a Path,
    pub stats: Option<&'a ProcessingStats>,
    pub strategy: Option<&'a DataStrategy>,
    /// Failure of the data strategy that produced `data_path`, if any.
    pub strategy_error: Option<&'a DataError>,
    pub adapter: AdapterRef<'a>,
}

fn diag(stage: Stage, code: &str, severity: Severity, locus: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        code: code.to_string(),
        severity,
        message: message.into(),
        locus: locus.into(),
        stage,
    }
}

fn count_data_lines(path: &Path) -> Option<usize> {
    std::fs::read_to_string(path)
        .ok()
        .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count())
}

/// Static stage. Performs no process execution.
pub fn validate_static(input: &ValidationInput<'_>) -> (StageResult, Option<TrainingConfig>) {
    let st = Stage::Static;
    let mut out = Vec::new();
    let config: Option<TrainingConfig> = match serde_json::from_value(input.config.clone()) {
        Ok(c) => Some(c),
        Err(e) => {
            out.push(diag(st, code::CONFIG_RANGE, Severity::Hard, "config", format!("config does not parse: {e}")));
            None
        }
    };

    match input.strategy_error {
        Some(DataError::BudgetExceeded { requested, cap }) => out.push(diag(
            st,
            code::CONFIG_RANGE,
            Severity::Hard,
            "data_strategy.sample_budget",
            format!("{requested} samples requested, cap is {cap}"),
        )),
        Some(DataError::UnknownSource(s)) => out.push(diag(
            st,
            code::PATH_MISSING,
            Severity::Hard,
            "data_strategy.source_selection",
            format!("unknown source {s:?}"),
        )),
        Some(DataError::InvalidRule(m)) => out.push(diag(
            st,
            code::CONFIG_RANGE,
            Severity::Hard,
            "data_strategy.filter_rules",
            m.clone(),
        )),
        _ => {}
    }

    let mut records = None;
    if !input.data_path.exists() {
        out.push(diag(
            st,
            code::PATH_MISSING,
            Severity::Hard,
            "data",
            "training data file does not exist",
        ));
    } else if std::fs::metadata(input.data_path).map(|m| m.len()).unwrap_or(0) == 0 {
        out.push(diag(st, code::EMPTY_DATASET, Severity::Hard, "data", "training data file is empty"));
    } else {
        records = count_data_lines(input.data_path);
    }

    match input.adapter.argv.first() {
        Some(program) if resolve_program(program).is_some() => {}
        _ => out.push(diag(
            st,
            code::PATH_MISSING,
            Severity::Hard,
            "adapter",
            format!("adapter executable {:?} not found", input.adapter.argv.first().cloned().unwrap_or_default()),
        )),
    }

    if let Some(c) = &config {
        for v in c.violations(records) {
            out.push(diag(st, code::CONFIG_RANGE, Severity::Hard, format!("config.{}", v.field), v.message));
        }
        match input.adapter.descriptor {
            Some(d) => {
                for (name, value) in c.numeric_params() {
                    if let Some(range) = d.ranges.get(name) {
                        if !range.contains(value) {
                            out.push(diag(
                                st,
                                code::CONFIG_RANGE,
                                Severity::Hard,
                                format!("config.{name}"),
                                format!("{value} is outside the adapter range {}", range.describe()),
                            ));
                        }
                    }
                }
                if !d.methods.is_empty() && !d.methods.iter().any(|m| m == c.method.as_str()) {
                    out.push(diag(
                        st,
                        code::CONFIG_RANGE,
                        Severity::Hard,
                        "config.method",
                        format!("adapter does not support method {}", c.method.as_str()),
                    ));
                }
            }
            None if !input.adapter.argv.is_empty() => out.push(diag(
                st,
                code::PATH_MISSING,
                Severity::Hard,
                "adapter",
                "adapter did not describe itself",
            )),
            None => {}
        }
    }
    dedup(&mut out);
    (StageResult::from_diagnostics(st, out), config)
}

fn dedup(diags: &mut Vec<Diagnostic>) {
    let mut seen = std::collections::BTreeSet::new();
    diags.retain(|d| seen.insert((d.code.clone(), d.locus.clone(), d.message.clone())));
}

/// Sentence-like segments: runs of text separated by `.`, `!`, `?` or line
/// breaks.
pub fn sentence_segments(text: &str) -> usize {
    text.split(['.', '!', '?', '\n'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count()
}

fn parse_records(path: &Path) -> Result<Vec<DataRecord>, (usize, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| (0, e.to_string()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str::<DataRecord>(line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(records)
}

/// Seeded sample of at most `k` records, in file order.
pub fn mini_sample(records: &[DataRecord], k: usize, seed: u64) -> Vec<DataRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, records.len(), k.min(records.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| records[i].clone()).collect()
}

/// Telemetry of a completed mini run, consumed by the runtime stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniTelemetry {
    pub exit_code: i32,
    pub loss: Vec<LossPoint>,
    pub invalid_gradients: bool,
    pub batches: u64,
}

/// Data-format checks, then the adapter's mini mode. Returns telemetry
/// when the mini run produced something the runtime stage can inspect.
pub fn validate_mini_run(
    config: &TrainingConfig,
    input: &ValidationInput<'_>,
    options: &ValidationOptions,
    runner: &mut dyn MiniRunner,
) -> (StageResult, Option<MiniTelemetry>) {
    let st = Stage::MiniRun;
    let mut out = Vec::new();
    let records = match parse_records(input.data_path) {
        Ok(r) => r,
        Err((line, e)) => {
            out.push(diag(
                st,
                code::FORMAT_VIOLATION,
                Severity::Hard,
                format!("data line {line}"),
                format!("not an instruction-response record: {e}"),
            ));
            return (StageResult::from_diagnostics(st, out), None);
        }
    };
    if records.is_empty() {
        out.push(diag(st, code::EMPTY_DATASET, Severity::Hard, "data", "zero training records"));
        return (StageResult::from_diagnostics(st, out), None);
    }

    let sample = mini_sample(&records, options.sample_size, options.seed);
    for (i, r) in sample.iter().enumerate() {
        let locus = format!("sample {i}");
        if r.instruction.trim().is_empty() {
            out.push(diag(st, code::FORMAT_VIOLATION, Severity::Hard, &locus, "empty instruction"));
        }
        if r.output.trim().is_empty() {
            out.push(diag(st, code::FORMAT_VIOLATION, Severity::Hard, &locus, "empty output"));
        } else if options.requires_reasoning_field && sentence_segments(&r.output) < 2 {
            out.push(diag(
                st,
                code::FORMAT_VIOLATION,
                Severity::Hard,
                &locus,
                "output lacks a reasoning chain (fewer than 2 sentences)",
            ));
        }
    }
    if let Some(s) = input.strategy {
        for (i, req) in s.synthesis_requests.iter().enumerate() {
            if req.validation_rule.is_none() {
                out.push(diag(
                    st,
                    code::FORMAT_VIOLATION,
                    Severity::Hard,
                    format!("data_strategy.synthesis_requests[{i}]"),
                    "synthesis request has no outcome validation rule",
                ));
            }
        }
    }
    if let Some(stats) = input.stats {
        let ratio = stats.retention_ratio();
        if stats.input_count > 0 && ratio < options.min_retention {
            out.push(diag(
                st,
                code::HIGH_FILTER_RATE,
                Severity::Soft,
                "data_strategy",
                format!(
                    "retained {} of {} records ({ratio:.3})",
                    stats.retained_count, stats.input_count
                ),
            ));
        }
    }
    if records.len() >= 2 {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            *counts.entry(r.output.trim()).or_default() += 1;
        }
        let (label, top) = counts.iter().max_by_key(|(_, n)| **n).map(|(l, n)| (*l, *n)).unwrap_or(("", 0));
        let share = top as f64 / records.len() as f64;
        if share > options.max_majority_share {
            out.push(diag(
                st,
                code::SKEWED_DISTRIBUTION,
                Severity::Soft,
                "data.output",
                format!("{share:.3} of outputs are {label:?}"),
            ));
        }
    }
    dedup(&mut out);
    if out.iter().any(|d| d.severity == Severity::Hard) {
        return (StageResult::from_diagnostics(st, out), None);
    }

    let telemetry = match runner.run_mini(config, &sample) {
        Err(reason) => {
            out.push(diag(st, code::MINI_RUN_FAILED, Severity::Hard, "adapter --mini", reason));
            None
        }
        Ok(o) if o.timed_out => {
            out.push(diag(st, code::MINI_RUN_FAILED, Severity::Hard, "adapter --mini", "mini run timed out"));
            None
        }
        Ok(o) if o.exit_code == EXIT_DATA_ERROR => {
            out.push(diag(
                st,
                code::FORMAT_VIOLATION,
                Severity::Hard,
                "adapter --mini",
                format!("adapter rejected the data: {}", o.stderr_tail),
            ));
            None
        }
        Ok(o) if o.exit_code == 0 || o.exit_code == EXIT_NUMERICAL_ERROR => match o.outputs {
            Ok(outputs) => Some(MiniTelemetry {
                exit_code: o.exit_code,
                invalid_gradients: outputs.manifest.invalid_gradients,
                batches: outputs.manifest.batches,
                loss: outputs.loss,
            }),
            Err(_) if o.exit_code == EXIT_NUMERICAL_ERROR => Some(MiniTelemetry {
                exit_code: o.exit_code,
                invalid_gradients: true,
                batches: 0,
                loss: Vec::new(),
            }),
            Err(v) => {
                out.push(diag(
                    st,
                    code::MINI_RUN_FAILED,
                    Severity::Hard,
                    "adapter --mini",
                    format!("outputs break the adapter contract: {v}"),
                ));
                None
            }
        },
        Ok(o) => {
            out.push(diag(
                st,
                code::MINI_RUN_FAILED,
                Severity::Hard,
                "adapter --mini",
                format!("adapter exited with {}: {}", o.exit_code, o.stderr_tail),
            ));
            None
        }
    };
    (StageResult::from_diagnostics(st, out), telemetry)
}

/// Runtime sanity over mini-run telemetry.
pub fn validate_runtime_sanity(telemetry: &MiniTelemetry, options: &ValidationOptions) -> StageResult {
    let st = Stage::RuntimeSanity;
    let mut out = Vec::new();
    if let Some(p) = telemetry.loss.iter().find(|p| !p.train_loss.is_finite() || p.eval_loss.is_some_and(|e| !e.is_finite())) {
        out.push(diag(
            st,
            code::EXPLODING_LOSS,
            Severity::Hard,
            format!("step {}", p.step),
            "non-finite loss",
        ));
    } else if let Some(w) = telemetry
        .loss
        .windows(2)
        .find(|w| w[0].train_loss > 0.0 && w[1].train_loss > options.explode_ratio * w[0].train_loss)
    {
        out.push(diag(
            st,
            code::EXPLODING_LOSS,
            Severity::Hard,
            format!("step {}", w[1].step),
            format!(
                "loss rose {:.1}x ({} -> {})",
                w[1].train_loss / w[0].train_loss,
                w[0].train_loss,
                w[1].train_loss
            ),
        ));
    }
    if telemetry.invalid_gradients {
        out.push(diag(
            st,
            code::INVALID_GRADIENTS,
            Severity::Hard,
            "adapter manifest",
            "adapter reported invalid gradients",
        ));
    } else if telemetry.exit_code == EXIT_NUMERICAL_ERROR && out.is_empty() {
        out.push(diag(
            st,
            code::INVALID_GRADIENTS,
            Severity::Hard,
            "adapter --mini",
            "adapter exited with a numerical error",
        ));
    }
    if telemetry.batches == 0 && telemetry.exit_code == 0 {
        out.push(diag(
            st,
            code::EMPTY_DATASET,
            Severity::Hard,
            "adapter manifest",
            "mini run consumed zero batches",
        ));
    }
    StageResult::from_diagnostics(st, out)
}

/// Runs the stages in order, skipping everything after a hard failure.
pub fn progressive_validate(
    input: &ValidationInput<'_>,
    options: &ValidationOptions,
    runner: &mut dyn MiniRunner,
) -> ValidationReport {
    let (static_result, config) = validate_static(input);
    let mut stages = vec![static_result];
    let config = match config {
        Some(c) if stages[0].status == StageStatus::Pass => c,
        _ => {
            stages.push(StageResult::skipped(Stage::MiniRun));
            stages.push(StageResult::skipped(Stage::RuntimeSanity));
            return ValidationReport::from_stages(stages);
        }
    };
    let (mini, telemetry) = validate_mini_run(&config, input, options, runner);
    let mini_failed = mini.status == StageStatus::Fail;
    stages.push(mini);
    match telemetry {
        Some(t) if !mini_failed => stages.push(validate_runtime_sanity(&t, options)),
        _ => stages.push(StageResult::skipped(Stage::RuntimeSanity)),
    }
    ValidationReport::from_stages(stages)
}

/// Checks that every `train_launch` event is preceded, in the same
/// iteration, by a `validation` event whose verdict allowed training.
/// Returns the offending launches.
pub fn audit_gate_soundness(events: &[Event]) -> Vec<Event> {
    let mut allowed: BTreeMap<i64, bool> = BTreeMap::new();
    let mut offenders = Vec::new();
    for e in events {
        match e.event.as_str() {
            kind::VALIDATION => {
                let ok = e.detail.get("verdict").and_then(Value::as_str).is_some_and(|v| v != "hard_fail");
                allowed.insert(e.iteration, ok);
            }
            kind::TRAIN_LAUNCH if !allowed.get(&e.iteration).copied().unwrap_or(false) => offenders.push(e.clone()),
            _ => {}
        }
    }
    offenders
}

#[cfg(test)]
mod tests;
