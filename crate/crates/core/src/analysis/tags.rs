//! Built-in error tags for incorrect evaluation instances.

use std::collections::BTreeSet;

pub const EMPTY_OUTPUT: &str = "empty-output";
pub const FORMAT_VIOLATION: &str = "format-violation";
pub const WRONG_LABEL: &str = "wrong-label";
pub const NUMERIC_OFF: &str = "numeric-off-by-tolerance";

/// Label vocabularies larger than this are treated as free-form answers.
const CATEGORICAL_LIMIT: usize = 20;

/// Tags one incorrect prediction. `extracted` is `None` when the task's
/// answer-extraction rule found nothing; `vocabulary` holds the distinct
/// gold labels of the evaluated split.
pub fn tag_error(raw: &str, extracted: Option<&str>, gold: &str, vocabulary: &BTreeSet<String>) -> &'static str {
    if raw.trim().is_empty() {
        return EMPTY_OUTPUT;
    }
    let Some(answer) = extracted else {
        return FORMAT_VIOLATION;
    };
    let answer = answer.trim();
    if answer.is_empty() {
        return EMPTY_OUTPUT;
    }
    if answer.parse::<f64>().is_ok() && gold.trim().parse::<f64>().is_ok() {
        return NUMERIC_OFF;
    }
    if vocabulary.len() <= CATEGORICAL_LIMIT && !vocabulary.contains(answer) {
        return FORMAT_VIOLATION;
    }
    WRONG_LABEL
}
