use serde::{Deserialize, Serialize};

use crate::analysis::Decision;
use crate::sandbox::events::kind;
use crate::sandbox::{Event, LedgerEntry, Money};

pub const IMPROVE_RATE_DEFINITION: &str = "accepted iterations / started iterations";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub loops: usize,
    pub accepted: usize,
    /// Fraction in [0, 1]; 0 when no iteration started.
    pub improve_rate: f64,
    pub effective_iterations: usize,
    pub total_cost: Money,
}

impl Telemetry {
    pub fn from_decisions(decisions: &[Decision], total_cost: Money) -> Self {
        let loops = decisions.len();
        let accepted = decisions.iter().filter(|d| **d == Decision::Accepted).count();
        Self {
            loops,
            accepted,
            improve_rate: if loops == 0 { 0.0 } else { accepted as f64 / loops as f64 },
            effective_iterations: decisions.iter().filter(|d| d.is_effective()).count(),
            total_cost,
        }
    }

    pub fn from_ledger(decisions: &[Decision], ledger: &[LedgerEntry]) -> Self {
        Self::from_decisions(decisions, ledger.iter().map(|e| e.amount).sum())
    }

    /// `loops: 8, improve_rate: 12.5%, effective: 8, cost: 5.73`
    pub fn render(&self) -> String {
        format!(
            "loops: {}, improve_rate: {}%, effective: {}, cost: {}",
            self.loops,
            trim_percent(self.improve_rate * 100.0),
            self.effective_iterations,
            self.total_cost
        )
    }
}

fn trim_percent(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event {index}: {message}")]
    Malformed { index: usize, message: String },
}

/// Recomputes telemetry from an event stream alone.
///
/// Each `iteration_start` counts one loop; its decision is read from the
/// matching `iteration_end`. An iteration that never ended counts as
/// crashed. Cost is the sum of every `charge` amount.
pub fn telemetry_from_events(events: &[Event]) -> Result<Telemetry, ReplayError> {
    let mut decisions: Vec<(i64, Option<Decision>)> = Vec::new();
    let mut cost = Money::ZERO;
    for (index, ev) in events.iter().enumerate() {
        let bad = |message: &str| ReplayError::Malformed {
            index,
            message: message.to_string(),
        };
        match ev.event.as_str() {
            kind::ITERATION_START => decisions.push((ev.iteration, None)),
            kind::ITERATION_END => {
                let d: Decision = serde_json::from_value(ev.detail["decision"].clone())
                    .map_err(|_| bad("iteration_end without a valid decision"))?;
                let slot = decisions
                    .iter_mut()
                    .rev()
                    .find(|(i, _)| *i == ev.iteration)
                    .ok_or_else(|| bad("iteration_end without iteration_start"))?;
                slot.1 = Some(d);
            }
            kind::CHARGE => {
                let amount: Money = serde_json::from_value(ev.detail["amount"].clone())
                    .map_err(|_| bad("charge without a valid amount"))?;
                cost += amount;
            }
            _ => {}
        }
    }
    let decisions: Vec<Decision> = decisions.into_iter().map(|(_, d)| d.unwrap_or(Decision::Crashed)).collect();
    Ok(Telemetry::from_decisions(&decisions, cost))
}
