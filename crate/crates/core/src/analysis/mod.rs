//! Feedback diagnosis: loss-curve regimes, error tagging, accept/reject
//! decisions and bounded iteration summaries.

mod decide;
mod distill;
mod loss_curve;
pub mod tags;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decide::{decide, is_better, Decision};
pub use distill::{distill, gist, IterationRecord, IterationSummary, DEFAULT_SUMMARY_CAP, MIN_SUMMARY_CAP};
pub use loss_curve::{classify_loss_curve, CurveVerdict, LossRules, Regime};

use crate::eval::EvalFeedback;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("loss trajectory needs at least 2 points, got {0}")]
    EmptyTrajectory(usize),
}

pub const DEFAULT_NARRATIVE_CAP: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub regime: Regime,
    pub evidence: Vec<(String, f64)>,
    pub error_tags: BTreeMap<String, usize>,
    pub narrative: String,
}

/// Classifies the training curve and tallies error tags over the sampled
/// failures of `feedback`. Trajectories too short to classify are
/// reported as inconclusive.
pub fn diagnose(feedback: &EvalFeedback, rules: &LossRules, narrative_cap: usize) -> Diagnosis {
    let (regime, evidence) = match classify_loss_curve(&feedback.loss_trajectory, rules) {
        Ok(v) => (v.regime, v.evidence),
        Err(AnalysisError::EmptyTrajectory(n)) => (Regime::Inconclusive, vec![("points".to_string(), n as f64)]),
    };
    let mut error_tags = BTreeMap::new();
    for rec in &feedback.failure_samples {
        let tag = rec.error_tag.clone().unwrap_or_else(|| tags::WRONG_LABEL.to_string());
        *error_tags.entry(tag).or_insert(0) += 1;
    }
    let mut narrative = format!("training regime: {}", regime.as_str());
    for (name, value) in &evidence {
        narrative.push_str(&format!("; {name}={value:.4}"));
    }
    if !error_tags.is_empty() {
        let tally: Vec<String> = error_tags.iter().map(|(t, n)| format!("{t} x{n}")).collect();
        narrative.push_str(&format!("; failures: {}", tally.join(", ")));
    }
    let mut cut = narrative.len().min(narrative_cap);
    while !narrative.is_char_boundary(cut) {
        cut -= 1;
    }
    narrative.truncate(cut);
    Diagnosis {
        regime,
        evidence,
        error_tags,
        narrative,
    }
}
