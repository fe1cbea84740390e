//! Metrics implemented as standalone executables.
//!
//! Invocation: `program [args..] <predictions> <gold>`, where both files are
//! JSON lines (`{"instance_id", "output"}` and `{"instance_id", "label"}`).
//! On success the program exits 0 and prints one JSON document
//! `{"aggregate": number, "per_instance": [{"instance_id", "correct", "error_tag"?}]}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use serde_json::json;

use super::metrics::{Metric, MetricItem, MetricKind, MetricOutcome};
use super::EvalError;

#[derive(Debug)]
pub struct ExternalMetric {
    id: String,
    program: String,
    args: Vec<String>,
    kind: MetricKind,
}

#[derive(Deserialize)]
struct WireInstance {
    instance_id: String,
    correct: bool,
    #[serde(default)]
    error_tag: Option<String>,
}

#[derive(Deserialize)]
struct WireResult {
    aggregate: f64,
    per_instance: Vec<WireInstance>,
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

struct Scratch(PathBuf);

impl Scratch {
    fn new() -> std::io::Result<Self> {
        let n = SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("ftloop-metric-{}-{n}", std::process::id()));
        fs::create_dir_all(&dir)?;
        Ok(Scratch(dir))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

pub fn write_wire_files(items: &[MetricItem]) -> (String, String) {
    let mut preds = String::new();
    let mut gold = String::new();
    for it in items {
        preds.push_str(&json!({"instance_id": it.instance_id, "output": it.prediction}).to_string());
        preds.push('\n');
        gold.push_str(&json!({"instance_id": it.instance_id, "label": it.gold}).to_string());
        gold.push('\n');
    }
    (preds, gold)
}

impl ExternalMetric {
    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>, kind: MetricKind) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            kind,
        }
    }
}

impl Metric for ExternalMetric {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> MetricKind {
        self.kind
    }

    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        let fail = |msg: String| EvalError::MetricFailure(format!("{}: {msg}", self.id));
        let scratch = Scratch::new().map_err(|e| fail(e.to_string()))?;
        let (preds, gold) = write_wire_files(items);
        let preds_path = scratch.0.join("predictions.jsonl");
        let gold_path = scratch.0.join("gold.jsonl");
        fs::write(&preds_path, preds).map_err(|e| fail(e.to_string()))?;
        fs::write(&gold_path, gold).map_err(|e| fail(e.to_string()))?;

        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&preds_path)
            .arg(&gold_path)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| fail(format!("cannot run {}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let result: WireResult =
            serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad output document: {e}")))?;
        let mut by_id: BTreeMap<String, WireInstance> =
            result.per_instance.into_iter().map(|w| (w.instance_id.clone(), w)).collect();
        let mut correct = Vec::with_capacity(items.len());
        let mut tags = Vec::with_capacity(items.len());
        for it in items {
            let w = by_id
                .remove(&it.instance_id)
                .ok_or_else(|| fail(format!("no result for {}", it.instance_id)))?;
            correct.push(w.correct);
            tags.push(w.error_tag);
        }
        if !result.aggregate.is_finite() {
            return Err(fail("non-finite aggregate".to_string()));
        }
        Ok(MetricOutcome {
            aggregate: result.aggregate,
            correct,
            tags,
        })
    }
}
