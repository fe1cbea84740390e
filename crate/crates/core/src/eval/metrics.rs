use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::external::ExternalMetric;
use super::EvalError;

/// One (prediction, gold) pair handed to a metric, after answer extraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricItem {
    pub instance_id: String,
    pub prediction: String,
    pub gold: String,
}

/// Whether an aggregate is a rate in [0, 1] or a non-negative error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rate,
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricOutcome {
    pub aggregate: f64,
    pub correct: Vec<bool>,
    /// Optional per-instance tags supplied by the metric itself.
    pub tags: Vec<Option<String>>,
}

impl MetricOutcome {
    fn plain(aggregate: f64, correct: Vec<bool>) -> Self {
        let tags = vec![None; correct.len()];
        Self {
            aggregate,
            correct,
            tags,
        }
    }
}

pub trait Metric: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn kind(&self) -> MetricKind;
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError>;
}

/// Case- and whitespace-insensitive text form used by accuracy.
pub fn normalize_answer(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn rate(correct: &[bool]) -> f64 {
    if correct.is_empty() {
        return 0.0;
    }
    correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64
}

#[derive(Debug)]
pub struct Accuracy;

impl Metric for Accuracy {
    fn id(&self) -> &str {
        "accuracy"
    }
    fn kind(&self) -> MetricKind {
        MetricKind::Rate
    }
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        let correct: Vec<bool> = items
            .iter()
            .map(|it| normalize_answer(&it.prediction) == normalize_answer(&it.gold))
            .collect();
        Ok(MetricOutcome::plain(rate(&correct), correct))
    }
}

#[derive(Debug)]
pub struct ExactMatch;

impl Metric for ExactMatch {
    fn id(&self) -> &str {
        "exact-match"
    }
    fn kind(&self) -> MetricKind {
        MetricKind::Rate
    }
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        let correct: Vec<bool> = items.iter().map(|it| it.prediction.trim() == it.gold.trim()).collect();
        Ok(MetricOutcome::plain(rate(&correct), correct))
    }
}

/// Unweighted mean of per-class F1 over the union of gold and predicted
/// labels. Undefined precision, recall or F1 counts as 0.
#[derive(Debug)]
pub struct MacroF1;

impl Metric for MacroF1 {
    fn id(&self) -> &str {
        "macro-f1"
    }
    fn kind(&self) -> MetricKind {
        MetricKind::Rate
    }
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        let pairs: Vec<(&str, &str)> = items.iter().map(|it| (it.prediction.trim(), it.gold.trim())).collect();
        let classes: BTreeSet<&str> = pairs.iter().flat_map(|(p, g)| [*p, *g]).collect();
        let mut total = 0.0;
        for class in &classes {
            let tp = pairs.iter().filter(|(p, g)| p == class && g == class).count() as f64;
            let predicted = pairs.iter().filter(|(p, _)| p == class).count() as f64;
            let actual = pairs.iter().filter(|(_, g)| g == class).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            if precision + recall > 0.0 {
                total += 2.0 * precision * recall / (precision + recall);
            }
        }
        let aggregate = if classes.is_empty() {
            0.0
        } else {
            total / classes.len() as f64
        };
        let correct = pairs.iter().map(|(p, g)| p == g).collect();
        Ok(MetricOutcome::plain(aggregate, correct))
    }
}

/// Mean absolute error over numeric answers. A prediction that does not
/// parse as a number is scored as 0; a non-numeric gold label is an error.
#[derive(Debug)]
pub struct MeanAbsoluteError;

pub const MAE_TOLERANCE: f64 = 1e-9;

impl Metric for MeanAbsoluteError {
    fn id(&self) -> &str {
        "mae"
    }
    fn kind(&self) -> MetricKind {
        MetricKind::Error
    }
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        let mut errors = Vec::with_capacity(items.len());
        for it in items {
            let gold: f64 = it
                .gold
                .trim()
                .parse()
                .map_err(|_| EvalError::MetricFailure(format!("mae: gold for {} is not numeric", it.instance_id)))?;
            let pred = it.prediction.trim().parse::<f64>().ok().filter(|v| v.is_finite()).unwrap_or(0.0);
            errors.push((pred - gold).abs());
        }
        let aggregate = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        let correct = errors.iter().map(|e| *e <= MAE_TOLERANCE).collect();
        Ok(MetricOutcome::plain(aggregate, correct))
    }
}

/// How a metric implementation is obtained when registering it by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricDescriptor {
    /// One of the built-ins, under a possibly different id.
    Builtin { name: String },
    /// An executable honoring the predictions/gold wire contract.
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_kind")]
        metric_kind: MetricKind,
    },
}

fn default_kind() -> MetricKind {
    MetricKind::Rate
}

pub const BUILTIN_METRICS: [&str; 4] = ["accuracy", "exact-match", "macro-f1", "mae"];

fn builtin(name: &str) -> Option<Arc<dyn Metric>> {
    Some(match name {
        "accuracy" => Arc::new(Accuracy),
        "exact-match" => Arc::new(ExactMatch),
        "macro-f1" => Arc::new(MacroF1),
        "mae" => Arc::new(MeanAbsoluteError),
        _ => return None,
    })
}

/// Renamed wrapper so a built-in can be registered under another id.
#[derive(Debug)]
struct Aliased {
    id: String,
    inner: Arc<dyn Metric>,
}

impl Metric for Aliased {
    fn id(&self) -> &str {
        &self.id
    }
    fn kind(&self) -> MetricKind {
        self.inner.kind()
    }
    fn score(&self, items: &[MetricItem]) -> Result<MetricOutcome, EvalError> {
        self.inner.score(items)
    }
}

#[derive(Clone, Debug, Default)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, Arc<dyn Metric>>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        for name in BUILTIN_METRICS {
            reg.register(builtin(name).expect("known builtin")).expect("fresh registry");
        }
        reg
    }

    pub fn register(&mut self, metric: Arc<dyn Metric>) -> Result<(), EvalError> {
        let id = metric.id().to_string();
        if self.metrics.contains_key(&id) {
            return Err(EvalError::DuplicateMetricId(id));
        }
        self.metrics.insert(id, metric);
        Ok(())
    }

    pub fn register_metric(&mut self, metric_id: &str, descriptor: MetricDescriptor) -> Result<(), EvalError> {
        let inner: Arc<dyn Metric> = match descriptor {
            MetricDescriptor::Builtin { name } => {
                builtin(&name).ok_or_else(|| EvalError::MetricNotRegistered(name.clone()))?
            }
            MetricDescriptor::External {
                program,
                args,
                metric_kind,
            } => Arc::new(ExternalMetric::new(metric_id, program, args, metric_kind)),
        };
        if inner.id() == metric_id {
            return self.register(inner);
        }
        self.register(Arc::new(Aliased {
            id: metric_id.to_string(),
            inner,
        }))
    }

    pub fn get(&self, metric_id: &str) -> Result<&Arc<dyn Metric>, EvalError> {
        self.metrics
            .get(metric_id)
            .ok_or_else(|| EvalError::MetricNotRegistered(metric_id.to_string()))
    }

    pub fn contains(&self, metric_id: &str) -> bool {
        self.metrics.contains_key(metric_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(preds: &[&str], gold: &[&str]) -> Vec<MetricItem> {
        preds
            .iter()
            .zip(gold)
            .enumerate()
            .map(|(i, (p, g))| MetricItem {
                instance_id: format!("i{i}"),
                prediction: p.to_string(),
                gold: g.to_string(),
            })
            .collect()
    }

    #[test]
    fn documented_examples() {
        let acc = Accuracy.score(&items(&["A", "B", "C", "A"], &["A", "B", "B", "A"])).unwrap();
        assert_eq!(acc.aggregate, 0.75);
        assert_eq!(acc.correct, vec![true, true, false, true]);
        let f1 = MacroF1.score(&items(&["1", "1", "0"], &["1", "0", "0"])).unwrap();
        assert!((f1.aggregate - 2.0 / 3.0).abs() < 1e-9);
        let mae = MeanAbsoluteError.score(&items(&["3", "5"], &["3", "4"])).unwrap();
        assert_eq!(mae.aggregate, 0.5);
        assert_eq!(mae.correct, vec![true, false]);
    }

    #[test]
    fn accuracy_normalizes_exact_match_does_not() {
        let it = items(&["  Paris  Is  nice"], &["paris is NICE"]);
        assert_eq!(Accuracy.score(&it).unwrap().aggregate, 1.0);
        assert_eq!(ExactMatch.score(&it).unwrap().aggregate, 0.0);
        assert_eq!(ExactMatch.score(&items(&[" x "], &["x"])).unwrap().aggregate, 1.0);
    }

    #[test]
    fn mae_unparsable_prediction_is_zero_and_bad_gold_fails() {
        assert_eq!(MeanAbsoluteError.score(&items(&["n/a"], &["2"])).unwrap().aggregate, 2.0);
        assert!(matches!(
            MeanAbsoluteError.score(&items(&["1"], &["two"])),
            Err(EvalError::MetricFailure(_))
        ));
    }

    #[test]
    fn empty_inputs_score_zero() {
        for name in BUILTIN_METRICS {
            assert_eq!(builtin(name).unwrap().score(&[]).unwrap().aggregate, 0.0);
        }
    }

    #[test]
    fn registry_rules() {
        let mut reg = MetricRegistry::with_builtins();
        assert!(matches!(
            reg.register(Arc::new(Accuracy)),
            Err(EvalError::DuplicateMetricId(id)) if id == "accuracy"
        ));
        reg.register_metric(
            "label-acc",
            MetricDescriptor::Builtin {
                name: "accuracy".into(),
            },
        )
        .unwrap();
        assert_eq!(reg.get("label-acc").unwrap().id(), "label-acc");
        assert!(matches!(reg.get("bleu"), Err(EvalError::MetricNotRegistered(_))));
    }
}
