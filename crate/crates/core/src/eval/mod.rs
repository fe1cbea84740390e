//! Evaluation engine: pluggable metrics over predictions and gold labels,
//! structured feedback assembly and the two-phase submission protocol.

mod external;
mod losslog;
mod metrics;
mod protocol;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{write_wire_files, ExternalMetric};
pub use losslog::{format_loss_log, parse_loss_log, LossLogError, LossPoint};
pub use metrics::{
    normalize_answer, Accuracy, ExactMatch, MacroF1, MeanAbsoluteError, Metric, MetricDescriptor, MetricItem,
    MetricKind, MetricOutcome, MetricRegistry, BUILTIN_METRICS, MAE_TOLERANCE,
};
pub use protocol::{EvalProtocol, ProtocolError, ProtocolPhase, TestFeedback, TestInstance};

use crate::analysis::tags;
use crate::data::EvalItem;

pub const DEFAULT_FAILURE_SAMPLES: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold label for instance {0:?}")]
    MissingGold(String),
    #[error("no prediction for instance {0:?}")]
    MissingPrediction(String),
    #[error("duplicate prediction for instance {0:?}")]
    DuplicateInstance(String),
    #[error("metric {0:?} is not registered")]
    MetricNotRegistered(String),
    #[error("metric {0:?} is already registered")]
    DuplicateMetricId(String),
    #[error("exactly one primary metric binding is required")]
    NoPrimaryMetric,
    #[error("metric failure: {0}")]
    MetricFailure(String),
    #[error("invalid answer extraction: {0}")]
    InvalidExtraction(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[serde(alias = "higher")]
    HigherIsBetter,
    #[serde(alias = "lower")]
    LowerIsBetter,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HigherIsBetter => "higher-is-better",
            Direction::LowerIsBetter => "lower-is-better",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricBinding {
    pub metric_id: String,
    pub direction: Direction,
    #[serde(default, alias = "primary_flag")]
    pub primary: bool,
}

impl MetricBinding {
    pub fn primary(metric_id: impl Into<String>, direction: Direction) -> Self {
        Self {
            metric_id: metric_id.into(),
            direction,
            primary: true,
        }
    }
}

/// The single primary binding, or `NoPrimaryMetric`.
pub fn primary_binding(bindings: &[MetricBinding]) -> Result<&MetricBinding, EvalError> {
    let mut primaries = bindings.iter().filter(|b| b.primary);
    match (primaries.next(), primaries.next()) {
        (Some(b), None) => Ok(b),
        _ => Err(EvalError::NoPrimaryMetric),
    }
}

/// Rule turning raw model output into the answer that gets matched.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnswerExtraction {
    #[default]
    FullText,
    LastLine,
    /// First capture group (or the whole match when there is no group).
    RegexCapture { pattern: String },
}

enum Extractor {
    FullText,
    LastLine,
    Regex(Regex),
}

impl Extractor {
    fn new(rule: &AnswerExtraction) -> Result<Self, EvalError> {
        Ok(match rule {
            AnswerExtraction::FullText => Extractor::FullText,
            AnswerExtraction::LastLine => Extractor::LastLine,
            AnswerExtraction::RegexCapture { pattern } => {
                Extractor::Regex(Regex::new(pattern).map_err(|e| EvalError::InvalidExtraction(e.to_string()))?)
            }
        })
    }

    fn extract(&self, raw: &str) -> Option<String> {
        match self {
            Extractor::FullText => Some(raw.trim().to_string()),
            Extractor::LastLine => raw.lines().rev().find(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()),
            Extractor::Regex(re) => re.captures(raw).map(|c| {
                c.get(1)
                    .or_else(|| c.get(0))
                    .map_or(String::new(), |m| m.as_str().trim().to_string())
            }),
        }
    }
}

impl AnswerExtraction {
    pub fn extract(&self, raw: &str) -> Result<Option<String>, EvalError> {
        Ok(Extractor::new(self)?.extract(raw))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub task_id: String,
    pub phase: Phase,
    pub items: Vec<Prediction>,
    pub model_ref: String,
}

impl PredictionSet {
    /// Parses prediction lines `{"instance_id", "output"}`.
    pub fn from_jsonl(task_id: &str, phase: Phase, model_ref: &str, text: &str) -> Result<Self, String> {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: Prediction = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            items.push(p);
        }
        Ok(Self {
            task_id: task_id.to_string(),
            phase,
            items,
            model_ref: model_ref.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub artifact_id: String,
    pub produced_by_iteration: i64,
    pub manifest_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub prediction: String,
    pub gold: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFeedback {
    pub aggregate: BTreeMap<String, f64>,
    pub per_instance: Vec<InstanceRecord>,
    pub loss_trajectory: Vec<LossPoint>,
    pub failure_samples: Vec<InstanceRecord>,
    pub phase: Phase,
    pub timestamp: u64,
}

impl EvalFeedback {
    pub fn score(&self, metric_id: &str) -> Option<f64> {
        self.aggregate.get(metric_id).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default)]
    pub extraction: AnswerExtraction,
    #[serde(default = "default_k")]
    pub failure_k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    DEFAULT_FAILURE_SAMPLES
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            extraction: AnswerExtraction::FullText,
            failure_k: DEFAULT_FAILURE_SAMPLES,
            seed: 0,
        }
    }
}

/// instance_id to gold label for a split partition.
pub fn gold_map(items: &[EvalItem]) -> BTreeMap<String, String> {
    items.iter().map(|it| (it.instance_id.clone(), it.gold().to_string())).collect()
}

/// Seeded choice of up to `k` indices out of `n`, returned in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Scores `preds` against `gold` under every binding. Per-instance
/// correctness follows the primary binding; incorrect instances carry an
/// error tag (metric-supplied when available, otherwise from the built-in
/// rule set).
pub fn evaluate(
    preds: &PredictionSet,
    gold: &BTreeMap<String, String>,
    bindings: &[MetricBinding],
    metrics: &MetricRegistry,
    loss_log: &[LossPoint],
    options: &EvalOptions,
    timestamp: u64,
) -> Result<EvalFeedback, EvalError> {
    let primary = primary_binding(bindings)?;
    let extractor = Extractor::new(&options.extraction)?;
    let mut seen = BTreeSet::new();
    let mut extracted = Vec::with_capacity(preds.items.len());
    let mut items = Vec::with_capacity(preds.items.len());
    for p in &preds.items {
        if !seen.insert(p.instance_id.as_str()) {
            return Err(EvalError::DuplicateInstance(p.instance_id.clone()));
        }
        let g = gold
            .get(&p.instance_id)
            .ok_or_else(|| EvalError::MissingGold(p.instance_id.clone()))?;
        let answer = extractor.extract(&p.output);
        items.push(MetricItem {
            instance_id: p.instance_id.clone(),
            prediction: answer.clone().unwrap_or_default(),
            gold: g.clone(),
        });
        extracted.push(answer);
    }

    let mut aggregate = BTreeMap::new();
    let mut primary_outcome = None;
    for b in bindings {
        let outcome = metrics.get(&b.metric_id)?.score(&items)?;
        if outcome.correct.len() != items.len() {
            return Err(EvalError::MetricFailure(format!(
                "{} returned {} flags for {} predictions",
                b.metric_id,
                outcome.correct.len(),
                items.len()
            )));
        }
        aggregate.insert(b.metric_id.clone(), outcome.aggregate);
        if b.primary {
            primary_outcome = Some(outcome);
        }
    }
    let outcome = primary_outcome.ok_or_else(|| EvalError::MetricNotRegistered(primary.metric_id.clone()))?;

    let vocabulary: BTreeSet<String> = gold.values().map(|g| g.trim().to_string()).collect();
    let per_instance: Vec<InstanceRecord> = preds
        .items
        .iter()
        .zip(&items)
        .zip(&extracted)
        .enumerate()
        .map(|(i, ((p, item), answer))| {
            let correct = outcome.correct[i];
            let error_tag = (!correct).then(|| {
                outcome.tags[i]
                    .clone()
                    .unwrap_or_else(|| tags::tag_error(&p.output, answer.as_deref(), &item.gold, &vocabulary).to_string())
            });
            InstanceRecord {
                instance_id: p.instance_id.clone(),
                prediction: p.output.clone(),
                gold: item.gold.clone(),
                correct,
                error_tag,
            }
        })
        .collect();

    let wrong: Vec<usize> = (0..per_instance.len()).filter(|&i| !per_instance[i].correct).collect();
    let failure_samples = sample_indices(wrong.len(), options.failure_k, options.seed)
        .into_iter()
        .map(|j| per_instance[wrong[j]].clone())
        .collect();

    Ok(EvalFeedback {
        aggregate,
        per_instance,
        loss_trajectory: loss_log.to_vec(),
        failure_samples,
        phase: preds.phase,
        timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(outputs: &[(&str, &str)]) -> PredictionSet {
        PredictionSet {
            task_id: "t".into(),
            phase: Phase::Validation,
            items: outputs
                .iter()
                .map(|(id, o)| Prediction {
                    instance_id: id.to_string(),
                    output: o.to_string(),
                })
                .collect(),
            model_ref: "m".into(),
        }
    }

    fn gold(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn feedback_shape() {
        let reg = MetricRegistry::with_builtins();
        let bindings = vec![
            MetricBinding::primary("accuracy", Direction::HigherIsBetter),
            MetricBinding {
                metric_id: "macro-f1".into(),
                direction: Direction::HigherIsBetter,
                primary: false,
            },
        ];
        let preds = set(&[("a", "A"), ("b", "B"), ("c", "C"), ("d", "A")]);
        let g = gold(&[("a", "A"), ("b", "B"), ("c", "B"), ("d", "A")]);
        let fb = evaluate(&preds, &g, &bindings, &reg, &[], &EvalOptions::default(), 5).unwrap();
        assert_eq!(fb.score("accuracy"), Some(0.75));
        assert!(fb.score("macro-f1").is_some());
        assert_eq!(fb.per_instance.len(), 4);
        assert_eq!(fb.failure_samples.len(), 1);
        assert_eq!(fb.failure_samples[0].instance_id, "c");
        assert_eq!(fb.failure_samples[0].error_tag.as_deref(), Some(tags::FORMAT_VIOLATION));
        assert_eq!(fb.timestamp, 5);
    }

    #[test]
    fn errors() {
        let reg = MetricRegistry::with_builtins();
        let acc = vec![MetricBinding::primary("accuracy", Direction::HigherIsBetter)];
        let opts = EvalOptions::default();
        assert_eq!(
            evaluate(&set(&[("x", "1")]), &gold(&[]), &acc, &reg, &[], &opts, 0),
            Err(EvalError::MissingGold("x".into()))
        );
        let bleu = vec![MetricBinding::primary("bleu", Direction::HigherIsBetter)];
        assert_eq!(
            evaluate(&set(&[]), &gold(&[]), &bleu, &reg, &[], &opts, 0),
            Err(EvalError::MetricNotRegistered("bleu".into()))
        );
        assert_eq!(
            evaluate(&set(&[]), &gold(&[]), &[], &reg, &[], &opts, 0),
            Err(EvalError::NoPrimaryMetric)
        );
        assert_eq!(
            evaluate(&set(&[("x", "1"), ("x", "2")]), &gold(&[("x", "1")]), &acc, &reg, &[], &opts, 0),
            Err(EvalError::DuplicateInstance("x".into()))
        );
    }

    #[test]
    fn extraction_rules() {
        let last = AnswerExtraction::LastLine;
        assert_eq!(last.extract("thinking...\nAnswer\n\n").unwrap().as_deref(), Some("Answer"));
        let re = AnswerExtraction::RegexCapture {
            pattern: r"answer:\s*(\d+)".into(),
        };
        assert_eq!(re.extract("so the answer: 42.").unwrap().as_deref(), Some("42"));
        assert_eq!(re.extract("no idea").unwrap(), None);
        assert!(AnswerExtraction::RegexCapture { pattern: "(".into() }.extract("x").is_err());
    }

    #[test]
    fn failure_sampling_is_seeded_and_bounded() {
        let reg = MetricRegistry::with_builtins();
        let acc = vec![MetricBinding::primary("accuracy", Direction::HigherIsBetter)];
        let ids: Vec<String> = (0..40).map(|i| format!("i{i}")).collect();
        let preds = set(&ids.iter().map(|i| (i.as_str(), "wrong")).collect::<Vec<_>>());
        let g = gold(&ids.iter().map(|i| (i.as_str(), "right")).collect::<Vec<_>>());
        let opts = EvalOptions {
            seed: 3,
            ..Default::default()
        };
        let a = evaluate(&preds, &g, &acc, &reg, &[], &opts, 0).unwrap();
        let b = evaluate(&preds, &g, &acc, &reg, &[], &opts, 0).unwrap();
        assert_eq!(a.failure_samples.len(), DEFAULT_FAILURE_SAMPLES);
        assert_eq!(a, b);
        assert!(a.failure_samples.iter().all(|f| !f.correct));
    }
}
