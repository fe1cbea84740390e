use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::eval::LossPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Overfitting,
    Underfitting,
    Unstable,
    Healthy,
    Inconclusive,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Overfitting => "overfitting",
            Regime::Underfitting => "underfitting",
            Regime::Unstable => "unstable",
            Regime::Healthy => "healthy",
            Regime::Inconclusive => "inconclusive",
        }
    }
}

/// Thresholds for [`classify_loss_curve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRules {
    /// Step-to-step train-loss growth factor treated as divergence.
    pub explode_ratio: f64,
    /// Trailing fraction of the trajectory in which an eval minimum does not
    /// count as early.
    pub overfit_tail_fraction: f64,
    /// Final eval loss at or above `overfit_rise * min` counts as degraded.
    pub overfit_rise: f64,
    /// Final train loss above `underfit_ratio * initial` counts as stalled.
    pub underfit_ratio: f64,
}

impl Default for LossRules {
    fn default() -> Self {
        Self {
            explode_ratio: 10.0,
            overfit_tail_fraction: 0.25,
            overfit_rise: 1.05,
            underfit_ratio: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveVerdict {
    pub regime: Regime,
    pub evidence: Vec<(String, f64)>,
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Rules, first match wins:
/// 1. unstable: any non-finite loss, or a train-loss step increase beyond
///    `explode_ratio`;
/// 2. overfitting: eval loss present, its minimum lies before the trailing
///    `overfit_tail_fraction` of points, the final eval loss is at least
///    `overfit_rise` times that minimum, and train loss did not rise overall;
/// 3. underfitting: final train loss above `underfit_ratio` x initial;
/// 4. healthy: the last three eval losses (train losses when no eval loss
///    is logged) are non-increasing;
/// 5. otherwise inconclusive.
pub fn classify_loss_curve(trajectory: &[LossPoint], rules: &LossRules) -> Result<CurveVerdict, AnalysisError> {
    if trajectory.len() < 2 {
        return Err(AnalysisError::EmptyTrajectory(trajectory.len()));
    }
    let mut evidence = Vec::new();
    let train: Vec<f64> = trajectory.iter().map(|p| p.train_loss).collect();
    let evals: Vec<(usize, f64)> = trajectory
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.eval_loss.map(|e| (i, e)))
        .collect();

    let non_finite = train.iter().chain(evals.iter().map(|(_, e)| e)).any(|v| !v.is_finite());
    if non_finite {
        evidence.push(("non_finite_loss".to_string(), 1.0));
        return Ok(CurveVerdict {
            regime: Regime::Unstable,
            evidence,
        });
    }
    let max_ratio = train
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0_f64, f64::max);
    evidence.push(("max_step_ratio".to_string(), max_ratio));
    if max_ratio > rules.explode_ratio {
        return Ok(CurveVerdict {
            regime: Regime::Unstable,
            evidence,
        });
    }

    let first = train[0];
    let last = *train.last().expect("len >= 2");
    let train_ratio = if first != 0.0 { last / first } else { 1.0 };
    evidence.push(("train_final_over_initial".to_string(), train_ratio));

    if !evals.is_empty() {
        let (min_pos, min_eval) = evals
            .iter()
            .copied()
            .fold((usize::MAX, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
        let final_eval = evals.last().expect("non-empty").1;
        let early = (min_pos as f64) < trajectory.len() as f64 * (1.0 - rules.overfit_tail_fraction);
        let rise = if min_eval > 0.0 { final_eval / min_eval } else { 1.0 };
        evidence.push(("eval_min_position".to_string(), min_pos as f64));
        evidence.push(("eval_final_over_min".to_string(), rise));
        if early && final_eval >= rules.overfit_rise * min_eval && last <= first {
            return Ok(CurveVerdict {
                regime: Regime::Overfitting,
                evidence,
            });
        }
    }

    if last > rules.underfit_ratio * first {
        return Ok(CurveVerdict {
            regime: Regime::Underfitting,
            evidence,
        });
    }

    let tail: Vec<f64> = if evals.is_empty() {
        train.iter().rev().take(3).rev().copied().collect()
    } else {
        evals.iter().rev().take(3).rev().map(|(_, e)| *e).collect()
    };
    let regime = if non_increasing(&tail) {
        Regime::Healthy
    } else {
        Regime::Inconclusive
    };
    Ok(CurveVerdict { regime, evidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(train: &[f64], eval: Option<&[f64]>) -> Vec<LossPoint> {
        train
            .iter()
            .enumerate()
            .map(|(i, &t)| LossPoint {
                step: i as u64 + 1,
                train_loss: t,
                eval_loss: eval.map(|e| e[i]),
            })
            .collect()
    }

    fn regime(train: &[f64], eval: Option<&[f64]>) -> Regime {
        classify_loss_curve(&curve(train, eval), &LossRules::default()).unwrap().regime
    }

    #[test]
    fn documented_examples() {
        assert_eq!(regime(&[2.0, 1.2, 0.8, 0.5], Some(&[1.5, 1.3, 1.4, 1.6])), Regime::Overfitting);
        assert_eq!(regime(&[2.0, f64::NAN], None), Regime::Unstable);
        assert_eq!(regime(&[2.0, 1.95, 1.93, 1.92], None), Regime::Underfitting);
    }

    #[test]
    fn other_regimes() {
        assert_eq!(regime(&[2.0, 45.0], None), Regime::Unstable);
        assert_eq!(regime(&[2.0, 1.0, 0.6, 0.4], Some(&[2.1, 1.2, 0.9, 0.8])), Regime::Healthy);
        assert_eq!(regime(&[2.0, 1.0, 0.6, 0.4], None), Regime::Healthy);
        assert_eq!(regime(&[2.0, 1.0, 1.2, 0.5], None), Regime::Inconclusive);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(matches!(
            classify_loss_curve(&curve(&[1.0], None), &LossRules::default()),
            Err(AnalysisError::EmptyTrajectory(1))
        ));
        assert!(classify_loss_curve(&[], &LossRules::default()).is_err());
    }

    proptest! {
        #[test]
        fn total_on_finite_curves(
            train in prop::collection::vec(0.0f64..100.0, 2..40),
            with_eval in any::<bool>(),
            seed in prop::collection::vec(0.0f64..100.0, 40),
        ) {
            let eval: Vec<f64> = seed.into_iter().take(train.len()).collect();
            let v = classify_loss_curve(&curve(&train, with_eval.then_some(&eval[..])), &LossRules::default());
            prop_assert!(v.is_ok());
        }
    }
}
