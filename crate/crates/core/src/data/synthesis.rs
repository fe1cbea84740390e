//! Materializes LLM synthesis requests over a training set.
//!
//! Each targeted record is rendered into the request's template and the
//! reply replaces the record's output when it passes the outcome check.
//! Failed checks keep the original record. Prompt sides never change, so
//! leakage exclusion done before synthesis still holds.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::normalize_answer;
use crate::llm::{Gateway, LlmError, LlmRequest};
use crate::sandbox::{BudgetClock, EventLog};

use super::record::DataRecord;
use super::strategy::{CompiledRule, OutcomeCheck, SynthesisRequest};
use super::DataError;

pub const SYNTHESIZED_META: &str = "synthesized";

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub targeted: usize,
    pub accepted: usize,
    pub rejected: usize,
}

enum Check {
    None,
    Contains,
    EndsWith,
    Matches(Regex),
}

impl Check {
    fn compile(rule: Option<&OutcomeCheck>) -> Result<Self, DataError> {
        Ok(match rule {
            None => Check::None,
            Some(OutcomeCheck::ContainsAnswer) => Check::Contains,
            Some(OutcomeCheck::EndsWithAnswer) => Check::EndsWith,
            Some(OutcomeCheck::Matches { pattern }) => {
                Check::Matches(Regex::new(pattern).map_err(|e| DataError::InvalidRule(e.to_string()))?)
            }
        })
    }

    fn passes(&self, synthesized: &str, answer: &str) -> bool {
        let answer = normalize_answer(answer);
        match self {
            Check::None => true,
            Check::Contains => normalize_answer(synthesized).contains(&answer),
            Check::EndsWith => synthesized
                .lines()
                .rev()
                .find(|l| !l.trim().is_empty())
                .is_some_and(|last| normalize_answer(last).ends_with(&answer)),
            Check::Matches(re) => re.is_match(synthesized),
        }
    }
}

pub fn materialize_synthesis(
    records: &mut [DataRecord],
    requests: &[SynthesisRequest],
    gateway: &mut Gateway,
    budget: &mut BudgetClock,
    events: &mut EventLog,
) -> Result<SynthesisStats, SynthesisError> {
    let mut stats = SynthesisStats::default();
    for req in requests {
        let target = req.target_records.as_ref().map(CompiledRule::new).transpose()?;
        let check = Check::compile(req.validation_rule.as_ref())?;
        for record in records.iter_mut() {
            if target.as_ref().is_some_and(|t| !t.keeps(record)) {
                continue;
            }
            stats.targeted += 1;
            let llm_req = LlmRequest::new(&req.template_id)
                .var("instruction", &record.instruction)
                .var("input", &record.input)
                .var("output", &record.output);
            let reply = gateway.complete(&llm_req, budget, events)?;
            let text = reply.text.trim();
            if !text.is_empty() && check.passes(text, &record.output) {
                record.output = text.to_string();
                record.meta.insert(SYNTHESIZED_META.into(), "true".into());
                stats.accepted += 1;
            } else {
                stats.rejected += 1;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;
    use std::time::Duration;

    use serde_json::json;

    use super::*;
    use crate::data::{FilterOp, FilterRule};
    use crate::llm::ScriptedBackend;
    use crate::sandbox::LogicalClock;

    fn run(records: &mut [DataRecord], req: SynthesisRequest, replies: &[&str]) -> SynthesisStats {
        let mut g = Gateway::scripted(ScriptedBackend::new(replies.iter().map(|s| s.to_string()).collect()));
        let mut budget = BudgetClock::new(Arc::new(LogicalClock::new(1)), Duration::from_secs(60), None);
        materialize_synthesis(records, &[req], &mut g, &mut budget, &mut EventLog::in_memory("r")).unwrap()
    }

    #[test]
    fn accepted_rewrites_are_tagged_and_failures_keep_original() {
        let mut records = vec![
            DataRecord::new("What is 2+3?", "", "5"),
            DataRecord::new("What is 4+4?", "", "8"),
            DataRecord::new("Name a color", "", "red").with_meta("kind", "open"),
        ];
        let req = SynthesisRequest {
            template_id: "cot-synthesis".into(),
            target_records: Some(FilterRule {
                field: "instruction".into(),
                op: FilterOp::Contains,
                value: json!("What is"),
            }),
            validation_rule: Some(OutcomeCheck::EndsWithAnswer),
        };
        let stats = run(&mut records, req, &["2 plus 3 makes 5.\n5", "4 doubled is 9.\n9"]);
        assert_eq!(stats, SynthesisStats { targeted: 2, accepted: 1, rejected: 1 });
        assert_eq!(records[0].output, "2 plus 3 makes 5.\n5");
        assert_eq!(records[0].meta[SYNTHESIZED_META], "true");
        assert_eq!(records[1].output, "8");
        assert!(records[1].meta.is_empty());
        assert_eq!(records[2].output, "red");
    }

    #[test]
    fn bad_pattern_is_a_data_error() {
        let mut g = Gateway::scripted(ScriptedBackend::new(vec![]));
        let mut budget = BudgetClock::new(Arc::new(LogicalClock::new(1)), Duration::from_secs(60), None);
        let req = SynthesisRequest {
            template_id: "cot-synthesis".into(),
            target_records: None,
            validation_rule: Some(OutcomeCheck::Matches { pattern: "(".into() }),
        };
        let err = materialize_synthesis(
            &mut [DataRecord::new("a", "", "b")],
            &[req],
            &mut g,
            &mut budget,
            &mut EventLog::in_memory("r"),
        )
        .unwrap_err();
        assert!(matches!(err, SynthesisError::Data(DataError::InvalidRule(_))));
    }
}
