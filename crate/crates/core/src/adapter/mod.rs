//! Trainer adapter contract.
//!
//! An adapter is any executable invoked as
//! `adapter --config <file> --data <file> --out <dir> [--mini]`. It writes
//! `<out>/loss.log` and `<out>/manifest`, and exits 0 on success, 2 on a data
//! error, 3 on a resource error and 4 on a numerical error. `adapter
//! --describe` prints an [`AdapterDescriptor`] as JSON.

pub mod mock;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::eval::{parse_loss_log, LossPoint};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_DATA_ERROR: i32 = 2;
pub const EXIT_RESOURCE_ERROR: i32 = 3;
pub const EXIT_NUMERICAL_ERROR: i32 = 4;

pub const LOSS_LOG: &str = "loss.log";
pub const MANIFEST: &str = "manifest";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter executable {0:?} not found")]
    NotFound(String),
    #[error("adapter --describe failed: {0}")]
    Describe(String),
    #[error("unknown adapter spec {0:?}")]
    UnknownSpec(String),
}

/// Closed or open interval of legal values for one numeric parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub min_exclusive: bool,
    #[serde(default)]
    pub max_exclusive: bool,
}

impl ParamRange {
    pub fn closed(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            min_exclusive: false,
            max_exclusive: false,
        }
    }

    pub fn open(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            min_exclusive: true,
            max_exclusive: true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let lo = if self.min_exclusive { v > self.min } else { v >= self.min };
        let hi = if self.max_exclusive { v < self.max } else { v <= self.max };
        lo && hi
    }

    pub fn describe(&self) -> String {
        format!(
            "{}{}, {}{}",
            if self.min_exclusive { '(' } else { '[' },
            self.min,
            self.max,
            if self.max_exclusive { ')' } else { ']' }
        )
    }
}

/// Self-description printed by `adapter --describe`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub name: String,
    #[serde(default)]
    pub ranges: BTreeMap<String, ParamRange>,
    #[serde(default)]
    pub methods: Vec<String>,
    /// Predict command for the untuned model, used for the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_predict_cmd: Option<Vec<String>>,
}

/// Artifact descriptor written to `<out>/manifest`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub artifact_id: String,
    /// Invoked with `--input <file> --output <file>` appended.
    pub predict_cmd: Vec<String>,
    #[serde(default)]
    pub invalid_gradients: bool,
    #[serde(default)]
    pub batches: u64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// One line of the evaluation input file handed to `predict_cmd`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictInput {
    pub instance_id: String,
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// A resolved adapter: its argv prefix and self-description.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub argv: Vec<String>,
    pub descriptor: AdapterDescriptor,
}

/// Locates `program` as a path or on `PATH`.
pub fn resolve_program(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if program.contains('/') {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|cand| cand.is_file())
    })
}

/// Runs `argv --describe` and parses its output.
pub fn describe(argv: &[String]) -> Result<AdapterDescriptor, AdapterError> {
    let (program, rest) = argv.split_first().ok_or_else(|| AdapterError::NotFound(String::new()))?;
    if resolve_program(program).is_none() {
        return Err(AdapterError::NotFound(program.clone()));
    }
    let out = Command::new(program)
        .args(rest)
        .arg("--describe")
        .stdin(Stdio::null())
        .output()
        .map_err(|e| AdapterError::Describe(e.to_string()))?;
    if !out.status.success() {
        return Err(AdapterError::Describe(format!("exited with {}", out.status)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| AdapterError::Describe(e.to_string()))
}

impl Adapter {
    /// Resolves `argv` and asks it to describe itself.
    pub fn from_argv(argv: Vec<String>) -> Result<Adapter, AdapterError> {
        let descriptor = describe(&argv)?;
        Ok(Adapter { argv, descriptor })
    }

    /// `mock`, `mock:delay=<ms>`, or a whitespace-separated command line.
    /// `mock_exe` is the binary that serves the mock trainer subcommands.
    pub fn from_spec(spec: &str, mock_exe: &Path) -> Result<Adapter, AdapterError> {
        if spec == "mock" || spec.starts_with("mock:") {
            let opts = spec.strip_prefix("mock:").unwrap_or("");
            let mut argv = vec![mock_exe.display().to_string(), mock::TRAINER_SUBCOMMAND.to_string()];
            for opt in opts.split(',').filter(|o| !o.is_empty()) {
                match opt.split_once('=') {
                    Some(("delay", ms)) if ms.parse::<u64>().is_ok() => {
                        argv.push("--delay-ms".into());
                        argv.push(ms.into());
                    }
                    _ => return Err(AdapterError::UnknownSpec(spec.to_string())),
                }
            }
            return Adapter::from_argv(argv);
        }
        let argv: Vec<String> = spec.split_whitespace().map(String::from).collect();
        if argv.is_empty() {
            return Err(AdapterError::UnknownSpec(spec.to_string()));
        }
        Adapter::from_argv(argv)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ContractViolation {
    #[error("{0} is missing")]
    Missing(&'static str),
    #[error("loss.log line {line}: {message}")]
    LossLine { line: usize, message: String },
    #[error("loss.log has no points")]
    EmptyLossLog,
    #[error("loss.log steps are not strictly increasing at line {0}")]
    StepOrder(usize),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Parsed, contract-conforming adapter outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterOutputs {
    pub loss: Vec<LossPoint>,
    pub manifest: AdapterManifest,
}

const FLOAT: &str = r"(?:[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?i:nan|inf|infinity))";

/// Checks the byte format of `loss.log` lines: single spaces, no
/// surrounding whitespace, `step <int> train_loss <float> [eval_loss <float>]`.
pub fn check_loss_log_text(text: &str) -> Result<Vec<LossPoint>, ContractViolation> {
    let line_re = Regex::new(&format!(r"^step \d+ train_loss {FLOAT}(?: eval_loss {FLOAT})?$")).expect("static regex");
    for (i, line) in text.lines().enumerate() {
        if !line_re.is_match(line) {
            return Err(ContractViolation::LossLine {
                line: i + 1,
                message: format!("malformed line {line:?}"),
            });
        }
    }
    let points = parse_loss_log(text).map_err(|e| ContractViolation::LossLine {
        line: e.line,
        message: e.message,
    })?;
    if points.is_empty() {
        return Err(ContractViolation::EmptyLossLog);
    }
    if let Some(i) = points.windows(2).position(|w| w[1].step <= w[0].step) {
        return Err(ContractViolation::StepOrder(i + 2));
    }
    Ok(points)
}

pub fn check_manifest_text(text: &str) -> Result<AdapterManifest, ContractViolation> {
    let m: AdapterManifest = serde_json::from_str(text).map_err(|e| ContractViolation::Manifest(e.to_string()))?;
    if m.artifact_id.trim().is_empty() {
        return Err(ContractViolation::Manifest("empty artifact_id".into()));
    }
    if m.predict_cmd.is_empty() {
        return Err(ContractViolation::Manifest("empty predict_cmd".into()));
    }
    Ok(m)
}

/// Contract checker for an adapter output directory.
pub fn check_outputs(out_dir: &Path) -> Result<AdapterOutputs, ContractViolation> {
    let loss = std::fs::read_to_string(out_dir.join(LOSS_LOG)).map_err(|_| ContractViolation::Missing(LOSS_LOG))?;
    let manifest =
        std::fs::read_to_string(out_dir.join(MANIFEST)).map_err(|_| ContractViolation::Missing(MANIFEST))?;
    Ok(AdapterOutputs {
        loss: check_loss_log_text(&loss)?,
        manifest: check_manifest_text(&manifest)?,
    })
}
