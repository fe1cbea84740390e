use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate, EvalError, EvalFeedback, EvalOptions, LossPoint, MetricBinding, MetricRegistry, Phase, PredictionSet};
use crate::sandbox::BudgetClock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolPhase {
    Open,
    Finalizing,
    Finalized,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("run is finalizing or finalized; validation is closed")]
    RunFinalized,
    #[error("wall-clock budget exhausted")]
    BudgetExhausted,
    #[error("the test split has already been evaluated for this run")]
    TestAlreadyConsumed,
    #[error("run is not finalizing")]
    RunNotFinalizing,
    #[error("prediction set is for the wrong phase")]
    WrongPhase,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInstance {
    pub instance_id: String,
    pub correct: bool,
}

/// Result of the single test evaluation: aggregates and correctness flags,
/// never gold labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFeedback {
    pub aggregate: BTreeMap<String, f64>,
    pub per_instance: Vec<TestInstance>,
    pub model_ref: String,
    pub timestamp: u64,
}

/// Owner of one run's evaluation state. Validation submissions are
/// unlimited while the run is open; the test split is scored at most once,
/// and only after finalization began.
#[derive(Debug)]
pub struct EvalProtocol {
    val_gold: BTreeMap<String, String>,
    test_gold: BTreeMap<String, String>,
    bindings: Vec<MetricBinding>,
    metrics: Arc<MetricRegistry>,
    options: EvalOptions,
    phase: ProtocolPhase,
    history: Vec<EvalFeedback>,
    test_count: usize,
}

fn check_complete(preds: &PredictionSet, gold: &BTreeMap<String, String>) -> Result<(), EvalError> {
    let ids: std::collections::BTreeSet<&str> = preds.items.iter().map(|p| p.instance_id.as_str()).collect();
    match gold.keys().find(|k| !ids.contains(k.as_str())) {
        Some(missing) => Err(EvalError::MissingPrediction(missing.clone())),
        None => Ok(()),
    }
}

impl EvalProtocol {
    pub fn new(
        val_gold: BTreeMap<String, String>,
        test_gold: BTreeMap<String, String>,
        bindings: Vec<MetricBinding>,
        metrics: Arc<MetricRegistry>,
        options: EvalOptions,
    ) -> Self {
        Self {
            val_gold,
            test_gold,
            bindings,
            metrics,
            options,
            phase: ProtocolPhase::Open,
            history: Vec::new(),
            test_count: 0,
        }
    }

    pub fn phase(&self) -> ProtocolPhase {
        self.phase
    }

    pub fn history(&self) -> &[EvalFeedback] {
        &self.history
    }

    pub fn validation_count(&self) -> usize {
        self.history.len()
    }

    pub fn test_count(&self) -> usize {
        self.test_count
    }

    pub fn bindings(&self) -> &[MetricBinding] {
        &self.bindings
    }

    pub fn submit_validation(
        &mut self,
        preds: &PredictionSet,
        loss_log: &[LossPoint],
        clock: &BudgetClock,
    ) -> Result<EvalFeedback, ProtocolError> {
        if self.phase != ProtocolPhase::Open {
            return Err(ProtocolError::RunFinalized);
        }
        let now = clock.now();
        if clock.deadline_passed_at(now) {
            return Err(ProtocolError::BudgetExhausted);
        }
        if preds.phase != Phase::Validation {
            return Err(ProtocolError::WrongPhase);
        }
        check_complete(preds, &self.val_gold)?;
        let options = EvalOptions {
            seed: self.options.seed.wrapping_add(self.history.len() as u64),
            ..self.options.clone()
        };
        let fb = evaluate(preds, &self.val_gold, &self.bindings, &self.metrics, loss_log, &options, now)?;
        self.history.push(fb.clone());
        Ok(fb)
    }

    /// Closes validation. Idempotent while finalizing.
    pub fn begin_finalizing(&mut self) -> Result<(), ProtocolError> {
        match self.phase {
            ProtocolPhase::Open | ProtocolPhase::Finalizing => {
                self.phase = ProtocolPhase::Finalizing;
                Ok(())
            }
            ProtocolPhase::Finalized => Err(ProtocolError::TestAlreadyConsumed),
        }
    }

    pub fn submit_final_test(&mut self, preds: &PredictionSet, now: u64) -> Result<TestFeedback, ProtocolError> {
        match self.phase {
            ProtocolPhase::Open => return Err(ProtocolError::RunNotFinalizing),
            ProtocolPhase::Finalized => return Err(ProtocolError::TestAlreadyConsumed),
            ProtocolPhase::Finalizing => {}
        }
        if preds.phase != Phase::Test {
            return Err(ProtocolError::WrongPhase);
        }
        check_complete(preds, &self.test_gold)?;
        let fb = evaluate(preds, &self.test_gold, &self.bindings, &self.metrics, &[], &self.options, now)?;
        self.test_count += 1;
        self.phase = ProtocolPhase::Finalized;
        Ok(TestFeedback {
            aggregate: fb.aggregate,
            per_instance: fb
                .per_instance
                .into_iter()
                .map(|r| TestInstance {
                    instance_id: r.instance_id,
                    correct: r.correct,
                })
                .collect(),
            model_ref: preds.model_ref.clone(),
            timestamp: now,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Direction, Prediction};
    use crate::sandbox::LogicalClock;
    use std::time::Duration;

    fn gold(prefix: &str) -> BTreeMap<String, String> {
        (0..3).map(|i| (format!("{prefix}{i}"), "yes".to_string())).collect()
    }

    fn preds(prefix: &str, phase: Phase) -> PredictionSet {
        PredictionSet {
            task_id: "t".into(),
            phase,
            items: (0..3)
                .map(|i| Prediction {
                    instance_id: format!("{prefix}{i}"),
                    output: if i == 0 { "no" } else { "yes" }.into(),
                })
                .collect(),
            model_ref: "m".into(),
        }
    }

    fn protocol() -> EvalProtocol {
        EvalProtocol::new(
            gold("v"),
            gold("t"),
            vec![MetricBinding::primary("accuracy", Direction::HigherIsBetter)],
            Arc::new(MetricRegistry::with_builtins()),
            EvalOptions::default(),
        )
    }

    fn clock(limit_ms: u64) -> (Arc<LogicalClock>, BudgetClock) {
        let c = Arc::new(LogicalClock::manual());
        let b = BudgetClock::new(c.clone(), Duration::from_millis(limit_ms), None);
        (c, b)
    }

    #[test]
    fn documented_sequence() {
        let (_, clk) = clock(1000);
        let mut p = protocol();
        for _ in 0..3 {
            p.submit_validation(&preds("v", Phase::Validation), &[], &clk).unwrap();
        }
        assert_eq!(p.validation_count(), 3);
        assert_eq!(
            p.submit_final_test(&preds("t", Phase::Test), 0),
            Err(ProtocolError::RunNotFinalizing)
        );
        p.begin_finalizing().unwrap();
        assert_eq!(
            p.submit_validation(&preds("v", Phase::Validation), &[], &clk),
            Err(ProtocolError::RunFinalized)
        );
        let t = p.submit_final_test(&preds("t", Phase::Test), 0).unwrap();
        assert!((t.aggregate["accuracy"] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            p.submit_final_test(&preds("t", Phase::Test), 0),
            Err(ProtocolError::TestAlreadyConsumed)
        );
        assert_eq!(p.test_count(), 1);
    }

    #[test]
    fn deadline_blocks_validation() {
        let (c, clk) = clock(10);
        let mut p = protocol();
        c.advance(10);
        assert_eq!(
            p.submit_validation(&preds("v", Phase::Validation), &[], &clk),
            Err(ProtocolError::BudgetExhausted)
        );
        assert_eq!(p.validation_count(), 0);
    }

    #[test]
    fn incomplete_predictions_rejected_without_consuming() {
        let (_, clk) = clock(1000);
        let mut p = protocol();
        let mut short = preds("v", Phase::Validation);
        short.items.pop();
        assert!(matches!(
            p.submit_validation(&short, &[], &clk),
            Err(ProtocolError::Eval(EvalError::MissingPrediction(_)))
        ));
        p.begin_finalizing().unwrap();
        let mut short = preds("t", Phase::Test);
        short.items.pop();
        assert!(p.submit_final_test(&short, 0).is_err());
        assert!(p.submit_final_test(&preds("t", Phase::Test), 0).is_ok());
    }
}
