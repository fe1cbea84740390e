//! Shared data repository: source catalog, normalization to
//! instruction-response records, evaluation splits with leakage exclusion,
//! and application of declarative data strategies.

mod catalog;
mod record;
pub mod split;
mod strategy;
pub mod synthesis;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{catalog_sources, Catalog, CatalogEntry, CatalogSummary, DataSourceRef, SourceCount};
pub use record::{normalization_key, normalize, DataRecord, FormatHint, UnparsableRecord};
pub use split::{make_splits, split_size, SplitManifest};
pub use strategy::{
    apply_strategy, estimate_tokens, records_to_jsonl, DataStrategy, FilterOp, FilterRule, OutcomeCheck,
    ProcessingStats, SamplingMode, SynthesisRequest, TrainSet, TransformRule,
};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("unreadable source: {0}")]
    UnreadableSource(String),
    #[error("unparsable format: {0}")]
    UnparsableFormat(String),
    #[error("duplicate source id {0:?}")]
    DuplicateSourceId(String),
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("strategy retained zero records")]
    EmptyResult(ProcessingStats),
    #[error("strategy requests {requested} samples, cap is {cap}")]
    BudgetExceeded { requested: usize, cap: usize },
}

/// One held-out evaluation instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub instance_id: String,
    pub record: DataRecord,
}

impl EvalItem {
    pub fn gold(&self) -> &str {
        self.record.output.trim()
    }
}

/// Validation and test partitions of a task's evaluation pool, plus the
/// normalization keys every training set must avoid.
#[derive(Clone, Debug)]
pub struct EvalSplit {
    pub manifest: SplitManifest,
    pub pool_source: String,
    pub val: Vec<EvalItem>,
    pub test: Vec<EvalItem>,
    pub exclusion: BTreeSet<String>,
}

impl EvalSplit {
    /// Builds splits over `pool_source` after the optional context-length
    /// filter (`max_prompt_tokens` over instruction + input).
    pub fn build(
        catalog: &Catalog,
        pool_source: &str,
        seed: u64,
        max_prompt_tokens: Option<usize>,
    ) -> Result<EvalSplit, DataError> {
        let entry = catalog
            .get(pool_source)
            .ok_or_else(|| DataError::UnknownSource(pool_source.to_string()))?;
        let filtered: Vec<&DataRecord> = entry
            .records
            .iter()
            .filter(|r| {
                max_prompt_tokens.is_none_or(|cap| estimate_tokens(&r.instruction) + estimate_tokens(&r.input) <= cap)
            })
            .collect();
        let manifest = make_splits(filtered.len(), seed);
        let item = |i: usize| {
            let record = filtered[i].clone();
            let idx = record.meta.get("index").cloned().unwrap_or_else(|| i.to_string());
            EvalItem {
                instance_id: format!("{pool_source}:{idx}"),
                record,
            }
        };
        let val: Vec<EvalItem> = manifest.val_indices.iter().map(|&i| item(i)).collect();
        let test: Vec<EvalItem> = manifest.test_indices.iter().map(|&i| item(i)).collect();
        let exclusion = val
            .iter()
            .chain(&test)
            .map(|it| it.record.normalization_key())
            .collect();
        Ok(EvalSplit {
            manifest,
            pool_source: pool_source.to_string(),
            val,
            test,
            exclusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn eval_split_exclusion_covers_both_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        let body: Vec<String> = (0..10)
            .map(|i| json!({"instruction": format!("Item {i}"), "output": format!("{i}")}).to_string())
            .collect();
        std::fs::write(&p, body.join("\n")).unwrap();
        let cat = catalog_sources(&[DataSourceRef {
            source_id: "pool".into(),
            location: p,
            format_hint: "alpaca".into(),
            declared_count: None,
            quality_notes: String::new(),
        }])
        .unwrap();
        let split = EvalSplit::build(&cat, "pool", 4, None).unwrap();
        assert_eq!(split.val.len(), 5);
        assert_eq!(split.test.len(), 5);
        assert_eq!(split.exclusion.len(), 10);
        assert!(split.val[0].instance_id.starts_with("pool:"));

        let filtered = EvalSplit::build(&cat, "pool", 4, Some(0)).unwrap();
        assert_eq!(filtered.manifest.n, 0);
        assert!(filtered.val.is_empty());
    }
}
