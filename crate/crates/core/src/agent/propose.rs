use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::Decision;
use crate::data::{CatalogSummary, DataStrategy};
use crate::llm::{templates, FieldType, LlmRequest, Schema};
use crate::registry::TaskSpec;
use crate::validate::Severity;

use super::ExperienceEntry;

/// Prior iterations included verbatim in a proposal context.
pub const HISTORY_WINDOW: usize = 20;
const FAILURE_DIGESTS: usize = 5;

/// One iteration's proposal: what data to build, how to train, and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub data_strategy: DataStrategy,
    /// Kept as written so that out-of-range values reach the validator.
    pub training_config: Value,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_best_iteration: Option<i64>,
}

pub fn hypothesis_schema() -> Schema {
    Schema::new(&[
        ("reason", FieldType::String),
        ("hypothesis", FieldType::String),
        ("implementation_task", FieldType::Object),
    ])
    .with_escape("stop")
}

#[derive(Clone, Debug, PartialEq)]
pub enum Proposal {
    Plan(Plan),
    Stop { reason: String },
}

/// Interprets a schema-checked hypothesis payload.
pub fn parse_proposal(fields: &Map<String, Value>, parent: Option<i64>) -> Result<Proposal, String> {
    let text = |k: &str| fields.get(k).and_then(Value::as_str).unwrap_or("").trim().to_string();
    let reason = text("reason");
    if fields.get("stop").and_then(Value::as_bool) == Some(true) {
        return Ok(Proposal::Stop { reason });
    }
    let task = fields
        .get("implementation_task")
        .and_then(Value::as_object)
        .ok_or("implementation_task must be an object")?;
    let data_strategy: DataStrategy = serde_json::from_value(
        task.get("data_strategy").cloned().ok_or("implementation_task.data_strategy is missing")?,
    )
    .map_err(|e| format!("implementation_task.data_strategy: {e}"))?;
    let training_config = task
        .get("training_config")
        .filter(|v| v.is_object())
        .cloned()
        .ok_or("implementation_task.training_config must be an object")?;
    let hypothesis = text("hypothesis");
    let rationale = match (reason.is_empty(), hypothesis.is_empty()) {
        (true, true) => return Err("reason and hypothesis are both empty".into()),
        (false, false) => format!("{reason} Expected: {hypothesis}"),
        _ => format!("{reason}{hypothesis}"),
    };
    Ok(Proposal::Plan(Plan {
        data_strategy,
        training_config,
        rationale,
        parent_best_iteration: parent,
    }))
}

/// Inputs to the proposal prompt that come from outside the experience
/// store.
#[derive(Clone, Debug)]
pub struct ProposalContext<'a> {
    pub task: &'a TaskSpec,
    pub catalog: &'a CatalogSummary,
    pub iteration: i64,
    pub baseline: Option<f64>,
    pub best: Option<(i64, f64, &'a Plan)>,
    pub budget_line: String,
}

fn none_if_empty(lines: Vec<String>) -> String {
    if lines.is_empty() {
        "none".to_string()
    } else {
        lines.join("\n")
    }
}

fn score_text(s: Option<f64>) -> String {
    s.map_or_else(|| "unavailable".to_string(), |v| format!("{v:.6}"))
}

/// Builds the hypothesis request: objective, best plan, bounded history,
/// sibling attempts, outstanding warnings and recent failures.
pub fn build_request(ctx: &ProposalContext<'_>, entries: &[ExperienceEntry]) -> LlmRequest {
    let metric = ctx.task.primary_metric();
    let catalog: Vec<String> = ctx
        .catalog
        .iter()
        .map(|(id, c)| {
            let notes = if c.quality_notes.is_empty() { String::new() } else { format!(" ({})", c.quality_notes) };
            format!("- {id}: {} records, {}{notes}", c.records, c.format_hint)
        })
        .collect();
    let best_plan = match ctx.best {
        Some((i, score, plan)) => format!(
            "iteration {i}, score {score:.6}\n{}",
            serde_json::to_string_pretty(plan).expect("plan serializes")
        ),
        None => "none yet".to_string(),
    };
    let start = entries.len().saturating_sub(HISTORY_WINDOW);
    let history: Vec<String> = entries[start..].iter().map(|e| e.summary.render()).collect();
    let parent = ctx.best.map(|b| b.0);
    let siblings: Vec<String> = entries
        .iter()
        .filter(|e| e.plan.as_ref().is_some_and(|p| p.parent_best_iteration == parent))
        .map(|e| e.summary.render())
        .collect();
    let warnings: Vec<String> = entries
        .iter()
        .rev()
        .find_map(|e| e.validation.as_ref())
        .map(|r| {
            r.diagnostics
                .iter()
                .filter(|d| d.severity == Severity::Soft)
                .map(|d| format!("- {} at {}: {}", d.code, d.locus, d.message))
                .collect()
        })
        .unwrap_or_default();
    let mut failures: Vec<String> = entries
        .iter()
        .rev()
        .filter(|e| matches!(e.decision, Decision::FailedValidation | Decision::Crashed))
        .take(FAILURE_DIGESTS)
        .map(|e| format!("- iteration {} {}: {}", e.iteration, e.decision.as_str(), e.failure_digest()))
        .collect();
    failures.reverse();
    if let Some(fb) = entries.iter().rev().find_map(|e| e.feedback.as_ref()) {
        for r in fb.failure_samples.iter().take(FAILURE_DIGESTS) {
            failures.push(format!(
                "- {}: predicted {:?}, expected {:?} [{}]",
                r.instance_id,
                r.prediction,
                r.gold,
                r.error_tag.as_deref().unwrap_or("wrong-label")
            ));
        }
    }
    LlmRequest::new(templates::HYPOTHESIS)
        .var("objective", &ctx.task.objective)
        .var("output_contract", &ctx.task.output_contract)
        .var("metric", metric.map_or("", |m| m.metric_id.as_str()))
        .var("direction", metric.map_or("", |m| m.direction.as_str()))
        .var("budget", &ctx.budget_line)
        .var("iteration", ctx.iteration.to_string())
        .var("catalog", none_if_empty(catalog))
        .var("baseline", score_text(ctx.baseline))
        .var("best_plan", best_plan)
        .var("history", none_if_empty(history))
        .var("siblings", none_if_empty(siblings))
        .var("warnings", none_if_empty(warnings))
        .var("failures", none_if_empty(failures))
}
