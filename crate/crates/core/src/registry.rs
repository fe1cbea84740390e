//! Task registry: registration and facet queries over task specifications.
//!
//! A task spec file is one JSON document with the fields `task_id`,
//! `objective`, `domain_tag`, `metrics`, `data_sources`, `budget` and
//! `output_contract`. The first data source is the evaluation pool that
//! validation and test splits are drawn from.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adapter::AdapterDescriptor;
use crate::data::{Catalog, SourceCount};
use crate::eval::{primary_binding, AnswerExtraction, MetricBinding, MetricRegistry};
use crate::sandbox::Money;

pub const DEFAULT_WALL_CLOCK_SECS: u64 = 43_200;
pub const DEFAULT_MAX_TRAIN_SAMPLES: usize = 2_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("task {0:?} is already registered")]
    DuplicateTaskId(String),
    #[error("data descriptor {0:?} does not resolve in the catalog")]
    UnresolvableDataDescriptor(String),
    #[error("exactly one primary metric binding is required")]
    NoPrimaryMetric,
    #[error("metric {0:?} is not registered")]
    MetricNotRegistered(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown facet {0:?}")]
    UnknownFacet(String),
    #[error("{path}: {message}")]
    SpecFile { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Seconds.
    #[serde(default = "default_wall_clock")]
    pub wall_clock_limit: u64,
    #[serde(default = "default_max_samples")]
    pub max_train_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_llm_spend: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
}

fn default_wall_clock() -> u64 {
    DEFAULT_WALL_CLOCK_SECS
}

fn default_max_samples() -> usize {
    DEFAULT_MAX_TRAIN_SAMPLES
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            wall_clock_limit: DEFAULT_WALL_CLOCK_SECS,
            max_train_samples: DEFAULT_MAX_TRAIN_SAMPLES,
            max_llm_spend: None,
            max_iterations: None,
        }
    }
}

impl BudgetSpec {
    pub fn check(&self) -> Result<(), RegistryError> {
        if self.wall_clock_limit == 0 {
            return Err(RegistryError::InvalidBudget("wall_clock_limit must be positive".into()));
        }
        if self.max_train_samples == 0 {
            return Err(RegistryError::InvalidBudget("max_train_samples must be positive".into()));
        }
        if self.max_llm_spend.is_some_and(|m| m.nanos() <= 0) {
            return Err(RegistryError::InvalidBudget("max_llm_spend must be positive".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(RegistryError::InvalidBudget("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub objective: String,
    #[serde(default)]
    pub domain_tag: String,
    pub metrics: Vec<MetricBinding>,
    pub data_sources: Vec<String>,
    #[serde(default)]
    pub budget: BudgetSpec,
    pub output_contract: String,
    /// Training outputs must carry a reasoning chain.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub requires_reasoning_field: bool,
    #[serde(default)]
    pub answer_extraction: AnswerExtraction,
    /// Evaluation items whose prompt exceeds this estimate are dropped
    /// before splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_prompt_tokens: Option<usize>,
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<TaskSpec, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn primary_metric(&self) -> Option<&MetricBinding> {
        primary_binding(&self.metrics).ok()
    }

    pub fn eval_pool(&self) -> Option<&str> {
        self.data_sources.first().map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Facet {
    Objective,
    Metrics,
    Data,
    Budget,
    Capabilities,
}

impl FromStr for Facet {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "objective" => Facet::Objective,
            "metrics" => Facet::Metrics,
            "data" => Facet::Data,
            "budget" => Facet::Budget,
            "capabilities" => Facet::Capabilities,
            other => return Err(RegistryError::UnknownFacet(other.to_string())),
        })
    }
}

/// Static description of what agents may do and which adapters and
/// metrics exist.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub operations: Vec<String>,
    pub adapters: Vec<AdapterDescriptor>,
    pub metrics: Vec<String>,
}

pub const OPERATIONS: [&str; 5] = [
    "query_meta",
    "process_data",
    "train",
    "submit_validation",
    "submit_final_test",
];

impl Capabilities {
    pub fn assemble(adapters: Vec<AdapterDescriptor>, metrics: &MetricRegistry) -> Self {
        Self {
            operations: OPERATIONS.iter().map(|s| s.to_string()).collect(),
            adapters,
            metrics: metrics.ids().map(String::from).collect(),
        }
    }
}

#[derive(Debug)]
struct Registered {
    spec: Arc<TaskSpec>,
    sources: BTreeMap<String, SourceCount>,
}

/// Read-mostly task store; registrations take the write lock.
#[derive(Debug, Default)]
pub struct TaskRegistry {
    tasks: RwLock<BTreeMap<String, Registered>>,
    capabilities: Capabilities,
}

impl TaskRegistry {
    pub fn new(capabilities: Capabilities) -> Self {
        Self {
            tasks: RwLock::new(BTreeMap::new()),
            capabilities,
        }
    }

    pub fn register_task(
        &self,
        spec: TaskSpec,
        catalog: &Catalog,
        metrics: &MetricRegistry,
    ) -> Result<String, RegistryError> {
        if spec.task_id.trim().is_empty() {
            return Err(RegistryError::InvalidSpec("empty task_id".into()));
        }
        primary_binding(&spec.metrics).map_err(|_| RegistryError::NoPrimaryMetric)?;
        if let Some(b) = spec.metrics.iter().find(|b| !metrics.contains(&b.metric_id)) {
            return Err(RegistryError::MetricNotRegistered(b.metric_id.clone()));
        }
        if spec.data_sources.is_empty() {
            return Err(RegistryError::InvalidSpec("no data sources".into()));
        }
        if let Some(missing) = spec.data_sources.iter().find(|s| !catalog.contains(s)) {
            return Err(RegistryError::UnresolvableDataDescriptor(missing.clone()));
        }
        spec.budget.check()?;
        let summary = catalog.summary();
        let sources = spec
            .data_sources
            .iter()
            .filter_map(|s| summary.get(s).map(|c| (s.clone(), c.clone())))
            .collect();

        let mut tasks = self.tasks.write().expect("registry lock");
        if tasks.contains_key(&spec.task_id) {
            return Err(RegistryError::DuplicateTaskId(spec.task_id));
        }
        let id = spec.task_id.clone();
        tasks.insert(
            id.clone(),
            Registered {
                spec: Arc::new(spec),
                sources,
            },
        );
        Ok(id)
    }

    pub fn get(&self, task_id: &str) -> Result<Arc<TaskSpec>, RegistryError> {
        let tasks = self.tasks.read().expect("registry lock");
        tasks
            .get(task_id)
            .map(|r| r.spec.clone())
            .ok_or_else(|| RegistryError::UnknownTask(task_id.to_string()))
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.read().expect("registry lock").keys().cloned().collect()
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    pub fn query_meta(&self, task_id: &str, facet: &str) -> Result<Value, RegistryError> {
        let tasks = self.tasks.read().expect("registry lock");
        let reg = tasks
            .get(task_id)
            .ok_or_else(|| RegistryError::UnknownTask(task_id.to_string()))?;
        let spec = &reg.spec;
        Ok(match facet.parse::<Facet>()? {
            Facet::Objective => Value::String(spec.objective.clone()),
            Facet::Metrics => serde_json::to_value(&spec.metrics).expect("bindings serialize"),
            Facet::Data => json!({
                "data_sources": spec.data_sources,
                "eval_pool": spec.eval_pool(),
                "catalog": reg.sources,
                "output_contract": spec.output_contract,
            }),
            Facet::Budget => serde_json::to_value(&spec.budget).expect("budget serializes"),
            Facet::Capabilities => serde_json::to_value(&self.capabilities).expect("capabilities serialize"),
        })
    }

    /// Registers every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(&self, dir: &Path, catalog: &Catalog, metrics: &MetricRegistry) -> Result<Vec<String>, RegistryError> {
        let file_err = |path: &Path, message: String| RegistryError::SpecFile {
            path: path.display().to_string(),
            message,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| file_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut ids = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| file_err(&p, e.to_string()))?;
            let spec = TaskSpec::from_json(&text).map_err(|e| file_err(&p, e.to_string()))?;
            ids.push(self.register_task(spec, catalog, metrics)?);
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{catalog_sources, DataSourceRef};
    use crate::eval::Direction;

    fn catalog() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        std::fs::write(&p, "{\"instruction\":\"q\",\"output\":\"a\"}\n").unwrap();
        let cat = catalog_sources(&[DataSourceRef {
            source_id: "pool".into(),
            location: p,
            format_hint: "alpaca".into(),
            declared_count: None,
            quality_notes: String::new(),
        }])
        .unwrap();
        (dir, cat)
    }

    fn spec(id: &str) -> TaskSpec {
        serde_json::from_value(json!({
            "task_id": id,
            "objective": "Answer capital-city questions.",
            "domain_tag": "geography",
            "metrics": [{"metric_id": "accuracy", "direction": "higher-is-better", "primary": true}],
            "data_sources": ["pool"],
            "output_contract": "a single city name"
        }))
        .unwrap()
    }

    #[test]
    fn register_and_query() {
        let (_d, cat) = catalog();
        let metrics = MetricRegistry::with_builtins();
        let reg = TaskRegistry::new(Capabilities::assemble(vec![], &metrics));
        assert_eq!(reg.register_task(spec("t1"), &cat, &metrics).unwrap(), "t1");
        assert_eq!(*reg.get("t1").unwrap(), spec("t1"));
        assert_eq!(reg.query_meta("t1", "objective").unwrap(), json!("Answer capital-city questions."));
        let budget = reg.query_meta("t1", "budget").unwrap();
        assert_eq!(budget["wall_clock_limit"], 43_200);
        assert_eq!(budget["max_train_samples"], 2_000);
        assert_eq!(reg.query_meta("t1", "data").unwrap()["catalog"]["pool"]["records"], 1);
        assert!(reg.query_meta("t1", "capabilities").unwrap()["operations"].as_array().unwrap().len() == 5);
        assert_eq!(reg.query_meta("missing", "data"), Err(RegistryError::UnknownTask("missing".into())));
        assert_eq!(reg.query_meta("t1", "colour"), Err(RegistryError::UnknownFacet("colour".into())));
    }

    #[test]
    fn registration_errors() {
        let (_d, cat) = catalog();
        let metrics = MetricRegistry::with_builtins();
        let reg = TaskRegistry::default();
        reg.register_task(spec("t1"), &cat, &metrics).unwrap();
        assert_eq!(
            reg.register_task(spec("t1"), &cat, &metrics),
            Err(RegistryError::DuplicateTaskId("t1".into()))
        );
        let mut s = spec("t2");
        s.metrics.clear();
        assert_eq!(reg.register_task(s, &cat, &metrics), Err(RegistryError::NoPrimaryMetric));
        let mut s = spec("t3");
        s.metrics.push(MetricBinding::primary("mae", Direction::LowerIsBetter));
        assert_eq!(reg.register_task(s, &cat, &metrics), Err(RegistryError::NoPrimaryMetric));
        let mut s = spec("t4");
        s.data_sources = vec!["elsewhere".into()];
        assert_eq!(
            reg.register_task(s, &cat, &metrics),
            Err(RegistryError::UnresolvableDataDescriptor("elsewhere".into()))
        );
        let mut s = spec("t5");
        s.budget.max_train_samples = 0;
        assert!(matches!(reg.register_task(s, &cat, &metrics), Err(RegistryError::InvalidBudget(_))));
        assert_eq!(reg.task_ids(), vec!["t1"]);
    }

    #[test]
    fn json_round_trip() {
        let s = spec("t1");
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(TaskSpec::from_json(&text).unwrap(), s);
    }
}
