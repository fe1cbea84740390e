//! The fine-tuning agent loop: propose a plan, validate it cheaply, train,
//! score on validation, diagnose, keep the strictly best configuration, and
//! finally spend the single test evaluation on it.

mod phase;
mod propose;
mod run;
mod telemetry;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Decision, Diagnosis, IterationSummary, LossRules, DEFAULT_SUMMARY_CAP};
use crate::eval::{Direction, EvalFeedback, ModelArtifact};
use crate::sandbox::{Clock, LedgerEntry, Money, SystemClock};
use crate::validate::ValidationReport;

pub use phase::{audit_phase_events, transition_allowed, IllegalTransition, PhaseMachine, RunPhase};
pub use propose::{build_request, hypothesis_schema, parse_proposal, Plan, Proposal, ProposalContext, HISTORY_WINDOW};
pub use run::{run, RunInputs, RunOutcome, EVENTS_FILE, REPORT_FILE};
pub use telemetry::{telemetry_from_events, ReplayError, Telemetry, IMPROVE_RATE_DEFINITION};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run setup failed: {0}")]
    Setup(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One started iteration, as kept in the experience store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub iteration: i64,
    /// Absent when the proposal itself failed.
    pub plan: Option<Plan>,
    pub validation: Option<ValidationReport>,
    pub feedback: Option<EvalFeedback>,
    pub diagnosis: Option<Diagnosis>,
    pub summary: IterationSummary,
    pub decision: Decision,
    pub cost: Money,
    pub artifact: Option<ModelArtifact>,
    pub crash: Option<String>,
}

impl ExperienceEntry {
    /// One line explaining why the iteration did not complete.
    pub fn failure_digest(&self) -> String {
        if let Some(c) = &self.crash {
            return c.clone();
        }
        match &self.validation {
            Some(r) => r
                .hard()
                .map(|d| format!("{} at {}: {}", d.code, d.locus, d.message))
                .collect::<Vec<_>>()
                .join("; "),
            None => String::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Overrides the task's wall-clock budget.
    pub wall_clock: Option<Duration>,
    /// Overrides the task's training-sample cap.
    pub max_train_samples: Option<usize>,
    /// Overrides the task's iteration cap.
    pub max_iterations: Option<u32>,
    /// Overrides the task's LLM spend cap.
    pub spend_limit: Option<Money>,
    pub train_timeout: Duration,
    pub predict_timeout: Duration,
    pub summary_cap: usize,
    pub loss_rules: LossRules,
    pub clock: Arc<dyn Clock>,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            seed,
            out_dir: out_dir.into(),
            wall_clock: None,
            max_train_samples: None,
            max_iterations: None,
            spend_limit: None,
            train_timeout: Duration::from_secs(6 * 3600),
            predict_timeout: Duration::from_secs(3600),
            summary_cap: DEFAULT_SUMMARY_CAP,
            loss_rules: LossRules::default(),
            clock: Arc::new(SystemClock::new()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Finalized,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    WallClock,
    SpendLimit,
    MaxIterations,
    AgentStop,
    LlmUnavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub iteration: i64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: i64,
    pub decision: Decision,
    pub score: Option<f64>,
    pub verdict: Option<String>,
    pub cost: Money,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub model_ref: String,
    /// Iteration whose model was submitted; absent for the baseline.
    pub iteration: Option<i64>,
    pub aggregate: BTreeMap<String, f64>,
}

/// Written to `<out>/<run_id>/report.json` on every exit path after setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub task_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub stop_reason: StopReason,
    pub primary_metric: String,
    pub direction: Direction,
    pub baseline_score: Option<f64>,
    pub best: Option<BestRecord>,
    /// Every best update in order; strictly improving.
    pub best_history: Vec<BestRecord>,
    pub no_improvement: bool,
    pub telemetry: Telemetry,
    pub improve_rate_definition: String,
    pub iterations: Vec<IterationRow>,
    pub test: Option<TestResult>,
    pub notices: Vec<String>,
    pub ledger: Vec<LedgerEntry>,
    pub events_file: String,
}

impl RunReport {
    /// Plain-text rendering for terminals.
    pub fn render(&self) -> String {
        let score = |s: Option<f64>| s.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "run {} ({}) seed {}: {:?}, stopped by {:?}\n{} ({}), baseline {}\n{}\n",
            self.run_id,
            self.task_id,
            self.seed,
            self.status,
            self.stop_reason,
            self.primary_metric,
            self.direction.as_str(),
            score(self.baseline_score),
            self.telemetry.render()
        );
        out.push_str("iter  decision           score   verdict             cost\n");
        for r in &self.iterations {
            out.push_str(&format!(
                "{:>4}  {:<17}  {:>6}  {:<18}  {}\n",
                r.iteration,
                r.decision.as_str(),
                score(r.score),
                r.verdict.as_deref().unwrap_or("-"),
                r.cost
            ));
        }
        match &self.best {
            Some(b) => out.push_str(&format!("best: iteration {} score {:.4}\n", b.iteration, b.score)),
            None => out.push_str("best: none (no improvement over baseline)\n"),
        }
        if let Some(t) = &self.test {
            let agg: Vec<String> = t.aggregate.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
            out.push_str(&format!("test ({}): {}\n", t.model_ref, agg.join(", ")));
        }
        for n in &self.notices {
            out.push_str(&format!("notice: {n}\n"));
        }
        out
    }
}
