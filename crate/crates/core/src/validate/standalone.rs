use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::adapter::Adapter;
use crate::data::{DataStrategy, ProcessingStats};
use crate::sandbox::events::Event;
use crate::sandbox::{BudgetClock, EventLog, Limits, Sandbox, SandboxError, SystemClock};

use super::{progressive_validate, SandboxMiniRunner, ValidationInput, ValidationOptions, ValidationReport, MINI_TIMEOUT};

const RUN_ID: &str = "validate";

#[derive(Debug, Error)]
pub enum StandaloneError {
    #[error("cannot read {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validation request outside any run: a config file and a data file,
/// checked against one adapter in a scratch sandbox under `work_dir`.
#[derive(Debug)]
pub struct StandaloneRequest<'a> {
    pub config_path: &'a Path,
    pub data_path: &'a Path,
    pub adapter: &'a Adapter,
    pub options: ValidationOptions,
    pub stats: Option<ProcessingStats>,
    pub strategy: Option<DataStrategy>,
    pub work_dir: PathBuf,
}

/// Runs all three stages and returns the report with the sandbox events
/// it produced. The config must be readable JSON; a document that parses
/// but is not a valid training config is a static-stage failure.
pub fn validate_standalone(req: &StandaloneRequest<'_>) -> Result<(ValidationReport, Vec<Event>), StandaloneError> {
    let text = std::fs::read_to_string(req.config_path).map_err(|e| StandaloneError::Unreadable {
        path: req.config_path.display().to_string(),
        message: e.to_string(),
    })?;
    let config: Value = serde_json::from_str(&text).map_err(|e| StandaloneError::Unreadable {
        path: req.config_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut sandbox = Sandbox::new(&req.work_dir, Vec::new())?;
    sandbox.open_run(RUN_ID);
    let budget = BudgetClock::new(Arc::new(SystemClock::new()), Duration::from_secs(3600), None);
    let mut workspace = sandbox.create_workspace(RUN_ID, 0, budget.now())?;
    let mut events = EventLog::in_memory(RUN_ID);
    let data_path = std::path::absolute(req.data_path)?;
    let input = ValidationInput {
        config: &config,
        data_path: &data_path,
        stats: req.stats.as_ref(),
        strategy: req.strategy.as_ref(),
        strategy_error: None,
        adapter: req.adapter.into(),
    };
    let mut runner = SandboxMiniRunner {
        sandbox: &sandbox,
        workspace: &mut workspace,
        budget: &budget,
        events: &mut events,
        adapter: req.adapter,
        limits: Limits {
            timeout: MINI_TIMEOUT,
            ..Default::default()
        },
    };
    let report = progressive_validate(&input, &req.options, &mut runner);
    sandbox.close_run(RUN_ID);
    Ok((report, events.events().to_vec()))
}
