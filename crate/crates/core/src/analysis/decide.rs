use serde::{Deserialize, Serialize};

use crate::eval::Direction;

/// Terminal state of one loop iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    FailedValidation,
    Crashed,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accepted => "accepted",
            Decision::Rejected => "rejected",
            Decision::FailedValidation => "failed_validation",
            Decision::Crashed => "crashed",
        }
    }

    /// The full train-evaluate pipeline completed.
    pub fn is_effective(self) -> bool {
        matches!(self, Decision::Accepted | Decision::Rejected)
    }
}

/// Strict improvement of `candidate` over `reference` under `direction`.
/// NaN never improves on anything.
pub fn is_better(candidate: f64, reference: f64, direction: Direction) -> bool {
    match direction {
        Direction::HigherIsBetter => candidate > reference,
        Direction::LowerIsBetter => candidate < reference,
    }
}

/// Accepts iff `current` strictly beats the better of `best` (when present)
/// and `baseline`. Ties are rejected.
pub fn decide(current: f64, best: Option<f64>, baseline: f64, direction: Direction) -> Decision {
    let reference = match best {
        Some(b) if is_better(b, baseline, direction) => b,
        _ => baseline,
    };
    if is_better(current, reference, direction) {
        Decision::Accepted
    } else {
        Decision::Rejected
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Direction::*;

    #[test]
    fn documented_examples() {
        assert_eq!(decide(0.34, Some(0.34), 0.29, HigherIsBetter), Decision::Rejected);
        assert_eq!(decide(0.34, None, 0.29, HigherIsBetter), Decision::Accepted);
        assert_eq!(decide(0.42, Some(0.53), 0.53, LowerIsBetter), Decision::Accepted);
    }

    #[test]
    fn baseline_still_guards_when_best_is_worse() {
        assert_eq!(decide(0.30, Some(0.20), 0.31, HigherIsBetter), Decision::Rejected);
        assert_eq!(decide(f64::NAN, None, 0.0, HigherIsBetter), Decision::Rejected);
    }

    proptest! {
        #[test]
        fn never_accepts_equality(x in -1e6f64..1e6, base in -1e6f64..1e6, lower in any::<bool>()) {
            let dir = if lower { LowerIsBetter } else { HigherIsBetter };
            prop_assert_eq!(decide(x, Some(x), base, dir), Decision::Rejected);
            prop_assert_eq!(decide(x, None, x, dir), Decision::Rejected);
        }
    }
}
