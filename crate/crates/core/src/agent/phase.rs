use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::sandbox::events::kind;
use crate::sandbox::{BudgetClock, Event, EventLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Proposing,
    Validating,
    Training,
    Evaluating,
    Diagnosing,
    Finalizing,
    Finalized,
    Aborted,
}

impl RunPhase {
    pub const ALL: [RunPhase; 8] = [
        RunPhase::Proposing,
        RunPhase::Validating,
        RunPhase::Training,
        RunPhase::Evaluating,
        RunPhase::Diagnosing,
        RunPhase::Finalizing,
        RunPhase::Finalized,
        RunPhase::Aborted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunPhase::Proposing => "proposing",
            RunPhase::Validating => "validating",
            RunPhase::Training => "training",
            RunPhase::Evaluating => "evaluating",
            RunPhase::Diagnosing => "diagnosing",
            RunPhase::Finalizing => "finalizing",
            RunPhase::Finalized => "finalized",
            RunPhase::Aborted => "aborted",
        }
    }

    pub fn parse(s: &str) -> Option<RunPhase> {
        RunPhase::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunPhase::Finalized | RunPhase::Aborted)
    }
}

/// The phase-transition relation.
///
/// The iteration cycle is proposing, validating, training, evaluating,
/// diagnosing and back to proposing. A hard validation failure and a crash
/// in any stage return to proposing. Finalization starts only from
/// proposing or diagnosing, and any live phase may abort.
pub fn transition_allowed(from: RunPhase, to: RunPhase) -> bool {
    use RunPhase::*;
    if from.is_terminal() {
        return false;
    }
    if to == Aborted {
        return from != Finalizing;
    }
    matches!(
        (from, to),
        (Proposing, Validating)
            | (Proposing, Proposing)
            | (Proposing, Finalizing)
            | (Validating, Training)
            | (Validating, Proposing)
            | (Training, Evaluating)
            | (Training, Proposing)
            | (Evaluating, Diagnosing)
            | (Evaluating, Proposing)
            | (Diagnosing, Proposing)
            | (Diagnosing, Finalizing)
            | (Finalizing, Finalized)
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("illegal phase transition {} -> {}", from.as_str(), to.as_str())]
pub struct IllegalTransition {
    pub from: RunPhase,
    pub to: RunPhase,
}

/// Current phase of a run; every move is checked and logged.
#[derive(Debug)]
pub struct PhaseMachine {
    phase: RunPhase,
}

impl Default for PhaseMachine {
    fn default() -> Self {
        Self {
            phase: RunPhase::Proposing,
        }
    }
}

impl PhaseMachine {
    pub fn phase(&self) -> RunPhase {
        self.phase
    }

    /// Moves to `to` and emits a phase event, or refuses without side
    /// effects.
    pub fn try_advance(&mut self, to: RunPhase, budget: &BudgetClock, events: &mut EventLog) -> Result<(), IllegalTransition> {
        if !transition_allowed(self.phase, to) {
            return Err(IllegalTransition { from: self.phase, to });
        }
        events.emit(
            budget.now(),
            budget.iteration(),
            kind::PHASE,
            json!({"from": self.phase.as_str(), "to": to.as_str()}),
        );
        self.phase = to;
        Ok(())
    }

    /// # Panics
    /// On a transition outside the relation; the loop never requests one.
    pub fn advance(&mut self, to: RunPhase, budget: &BudgetClock, events: &mut EventLog) {
        if let Err(e) = self.try_advance(to, budget, events) {
            panic!("{e}");
        }
    }
}

/// Phase events in `events` that break the transition relation or do not
/// continue from the previous event's target.
pub fn audit_phase_events(events: &[Event]) -> Vec<Event> {
    let mut bad = Vec::new();
    let mut current = RunPhase::Proposing;
    for ev in events.iter().filter(|e| e.event == kind::PHASE) {
        let from = ev.detail["from"].as_str().and_then(RunPhase::parse);
        let to = ev.detail["to"].as_str().and_then(RunPhase::parse);
        match (from, to) {
            (Some(f), Some(t)) if f == current && transition_allowed(f, t) => current = t,
            (_, Some(t)) => {
                bad.push(ev.clone());
                current = t;
            }
            _ => bad.push(ev.clone()),
        }
    }
    bad
}
