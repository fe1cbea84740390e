//! Declarative data strategies: select sources, filter, transform, sample.
//!
//! Only this fixed rule vocabulary runs inside the repository. Arbitrary
//! processing code belongs in sandboxed processes that emit record files.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::Catalog;
use super::record::DataRecord;
use super::DataError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStrategy {
    pub source_selection: Vec<String>,
    #[serde(default)]
    pub filter_rules: Vec<FilterRule>,
    #[serde(default)]
    pub transform_rules: Vec<TransformRule>,
    pub sample_budget: usize,
    #[serde(default)]
    pub sampling_mode: SamplingMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synthesis_requests: Vec<SynthesisRequest>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    #[default]
    Uniform,
    QualityFirst,
    DifficultyStratified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Equals,
    NotEquals,
    Contains,
    NotContains,
    Matches,
    MinLen,
    MaxLen,
    /// Keeps records whose estimated token count (chars / 4, rounded up)
    /// over instruction, input and output is at most `value`.
    MaxTokens,
}

/// Keep-predicate: a record survives when the rule holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRule {
    pub field: String,
    pub op: FilterOp,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformRule {
    /// Replaces `field` with `template`, where `{instruction}`, `{input}`,
    /// `{output}` and `{meta.<key>}` are substituted.
    Template { field: String, template: String },
    /// Copies the value of `from` into `to`.
    Map { from: String, to: String },
    Truncate { field: String, max_chars: usize },
}

/// Outcome check applied to synthesized text against the original record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeCheck {
    ContainsAnswer,
    EndsWithAnswer,
    Matches { pattern: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub template_id: String,
    /// Records to rewrite; `None` selects every record.
    #[serde(default)]
    pub target_records: Option<FilterRule>,
    #[serde(default)]
    pub validation_rule: Option<OutcomeCheck>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessingStats {
    pub input_count: usize,
    pub retained_count: usize,
    pub filtered_by_rule: Vec<usize>,
    pub excluded_by_leakage: usize,
    pub unparsable_count: usize,
    pub emitted_count: usize,
}

impl ProcessingStats {
    pub fn retention_ratio(&self) -> f64 {
        if self.input_count == 0 {
            0.0
        } else {
            self.retained_count as f64 / self.input_count as f64
        }
    }

    /// `input = retained + filtered + leakage-excluded + unparsable`.
    pub fn is_conserved(&self) -> bool {
        self.input_count
            == self.retained_count
                + self.filtered_by_rule.iter().sum::<usize>()
                + self.excluded_by_leakage
                + self.unparsable_count
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSet {
    pub records: Vec<DataRecord>,
    pub stats: ProcessingStats,
}

impl TrainSet {
    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }
}

pub fn records_to_jsonl(records: &[DataRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// A filter rule with its regex compiled.
pub(crate) struct CompiledRule<'a> {
    rule: &'a FilterRule,
    regex: Option<Regex>,
}

impl<'a> CompiledRule<'a> {
    pub(crate) fn new(rule: &'a FilterRule) -> Result<Self, DataError> {
        let regex = match rule.op {
            FilterOp::Matches => {
                let pattern = rule
                    .value
                    .as_str()
                    .ok_or_else(|| DataError::InvalidRule(format!("{:?} needs a string pattern", rule.field)))?;
                Some(Regex::new(pattern).map_err(|e| DataError::InvalidRule(e.to_string()))?)
            }
            _ => None,
        };
        if matches!(rule.op, FilterOp::MinLen | FilterOp::MaxLen | FilterOp::MaxTokens) && rule.value.as_u64().is_none()
        {
            return Err(DataError::InvalidRule(format!(
                "{:?} on {:?} needs a non-negative integer",
                rule.op, rule.field
            )));
        }
        if !(rule.field.starts_with("meta.") || matches!(rule.field.as_str(), "instruction" | "input" | "output")) {
            return Err(DataError::InvalidRule(format!("unknown field {:?}", rule.field)));
        }
        Ok(Self { rule, regex })
    }

    pub(crate) fn keeps(&self, record: &DataRecord) -> bool {
        let field = record.field(&self.rule.field).unwrap_or("");
        let value_text = match &self.rule.value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let limit = self.rule.value.as_u64().unwrap_or(0) as usize;
        match self.rule.op {
            FilterOp::Equals => field == value_text,
            FilterOp::NotEquals => field != value_text,
            FilterOp::Contains => field.contains(&value_text),
            FilterOp::NotContains => !field.contains(&value_text),
            FilterOp::Matches => self.regex.as_ref().is_some_and(|r| r.is_match(field)),
            FilterOp::MinLen => field.chars().count() >= limit,
            FilterOp::MaxLen => field.chars().count() <= limit,
            FilterOp::MaxTokens => {
                estimate_tokens(&record.instruction) + estimate_tokens(&record.input) + estimate_tokens(&record.output)
                    <= limit
            }
        }
    }
}

fn apply_transform(rule: &TransformRule, record: &mut DataRecord) -> Result<(), DataError> {
    match rule {
        TransformRule::Template { field, template } => {
            let mut out = String::with_capacity(template.len());
            let mut rest = template.as_str();
            while let Some(start) = rest.find('{') {
                out.push_str(&rest[..start]);
                let after = &rest[start + 1..];
                match after.find('}') {
                    Some(end) => {
                        let name = &after[..end];
                        match record.field(name) {
                            Some(v) => out.push_str(v),
                            None => {
                                out.push('{');
                                out.push_str(name);
                                out.push('}');
                            }
                        }
                        rest = &after[end + 1..];
                    }
                    None => {
                        out.push_str(&rest[start..]);
                        rest = "";
                    }
                }
            }
            out.push_str(rest);
            if !record.set_field(field, out) {
                return Err(DataError::InvalidRule(format!("unknown field {field:?}")));
            }
        }
        TransformRule::Map { from, to } => {
            let v = record.field(from).unwrap_or("").to_string();
            if !record.set_field(to, v) {
                return Err(DataError::InvalidRule(format!("unknown field {to:?}")));
            }
        }
        TransformRule::Truncate { field, max_chars } => {
            if let Some(v) = record.field(field) {
                let cut: String = v.chars().take(*max_chars).collect();
                record.set_field(field, cut);
            }
        }
    }
    Ok(())
}

fn quality_of(r: &DataRecord) -> f64 {
    r.meta
        .get("quality")
        .and_then(|q| q.parse::<f64>().ok())
        .unwrap_or(r.output.chars().count() as f64)
}

fn sample(mut records: Vec<DataRecord>, budget: usize, mode: SamplingMode, seed: u64) -> Vec<DataRecord> {
    if records.len() <= budget {
        return records;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SamplingMode::Uniform => {
            records.shuffle(&mut rng);
            records.truncate(budget);
            records
        }
        SamplingMode::QualityFirst => {
            // stable sort keeps catalog order among equal scores
            records.sort_by(|a, b| quality_of(b).total_cmp(&quality_of(a)));
            records.truncate(budget);
            records
        }
        SamplingMode::DifficultyStratified => {
            let mut buckets: BTreeMap<String, Vec<DataRecord>> = BTreeMap::new();
            for r in records {
                let key = r.meta.get("difficulty").cloned().unwrap_or_default();
                buckets.entry(key).or_default().push(r);
            }
            let mut queues: Vec<std::vec::IntoIter<DataRecord>> = buckets
                .into_values()
                .map(|mut b| {
                    b.shuffle(&mut rng);
                    b.into_iter()
                })
                .collect();
            let mut out = Vec::with_capacity(budget);
            while out.len() < budget {
                let mut progressed = false;
                for q in queues.iter_mut() {
                    if out.len() == budget {
                        break;
                    }
                    if let Some(r) = q.next() {
                        out.push(r);
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
            }
            out
        }
    }
}

/// Applies `strategy` to the catalog, dropping every record whose
/// normalization key (before or after transforms) is in `exclusion`.
///
/// Deterministic in `(strategy, catalog, exclusion, seed)`.
pub fn apply_strategy(
    strategy: &DataStrategy,
    catalog: &Catalog,
    exclusion: &BTreeSet<String>,
    max_train_samples: usize,
    seed: u64,
) -> Result<TrainSet, DataError> {
    if strategy.sample_budget > max_train_samples {
        return Err(DataError::BudgetExceeded {
            requested: strategy.sample_budget,
            cap: max_train_samples,
        });
    }
    let rules = strategy
        .filter_rules
        .iter()
        .map(CompiledRule::new)
        .collect::<Result<Vec<_>, _>>()?;

    let mut seen = BTreeSet::new();
    let mut stats = ProcessingStats {
        filtered_by_rule: vec![0; rules.len()],
        ..ProcessingStats::default()
    };
    let mut retained = Vec::new();
    for id in &strategy.source_selection {
        if !seen.insert(id.as_str()) {
            continue;
        }
        let entry = catalog.get(id).ok_or_else(|| DataError::UnknownSource(id.clone()))?;
        stats.input_count += entry.records.len() + entry.unparsable;
        stats.unparsable_count += entry.unparsable;
        'records: for record in &entry.records {
            if exclusion.contains(&record.normalization_key()) {
                stats.excluded_by_leakage += 1;
                continue;
            }
            for (i, rule) in rules.iter().enumerate() {
                if !rule.keeps(record) {
                    stats.filtered_by_rule[i] += 1;
                    continue 'records;
                }
            }
            let mut record = record.clone();
            for t in &strategy.transform_rules {
                apply_transform(t, &mut record)?;
            }
            if exclusion.contains(&record.normalization_key()) {
                stats.excluded_by_leakage += 1;
                continue;
            }
            retained.push(record);
        }
    }
    stats.retained_count = retained.len();
    if retained.is_empty() {
        return Err(DataError::EmptyResult(stats));
    }
    let records = sample(retained, strategy.sample_budget, strategy.sampling_mode, seed);
    stats.emitted_count = records.len();
    Ok(TrainSet { records, stats })
}
