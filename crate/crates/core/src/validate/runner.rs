use std::time::Duration;

use crate::adapter::{check_outputs, Adapter, AdapterOutputs, ContractViolation};
use crate::data::{records_to_jsonl, DataRecord};
use crate::sandbox::{BudgetClock, CommandSpec, EventLog, Limits, Sandbox, Workspace};

use super::TrainingConfig;

/// What the mini stage learns from one `--mini` invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniRunOutcome {
    pub exit_code: i32,
    pub timed_out: bool,
    pub outputs: Result<AdapterOutputs, ContractViolation>,
    /// Last few hundred bytes of stderr, for diagnostics.
    pub stderr_tail: String,
}

/// Executes the adapter's mini mode on a sample. `Err` means the process
/// could not be run at all.
pub trait MiniRunner {
    fn run_mini(&mut self, config: &TrainingConfig, sample: &[DataRecord]) -> Result<MiniRunOutcome, String>;
}

pub const MINI_TIMEOUT: Duration = Duration::from_secs(60);
const STDERR_TAIL: usize = 400;

fn tail(text: &str) -> String {
    let text = text.trim();
    let mut start = text.len().saturating_sub(STDERR_TAIL);
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

/// Runs mini mode through the sandbox inside an iteration workspace,
/// under `mini/`.
pub struct SandboxMiniRunner<'a> {
    pub sandbox: &'a Sandbox,
    pub workspace: &'a mut Workspace,
    pub budget: &'a BudgetClock,
    pub events: &'a mut EventLog,
    pub adapter: &'a Adapter,
    pub limits: Limits,
}

impl MiniRunner for SandboxMiniRunner<'_> {
    fn run_mini(&mut self, config: &TrainingConfig, sample: &[DataRecord]) -> Result<MiniRunOutcome, String> {
        let dir = self.workspace.path("mini");
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let config_text = serde_json::to_string_pretty(config).expect("config serializes");
        std::fs::write(dir.join("config.json"), config_text).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("data.jsonl"), records_to_jsonl(sample)).map_err(|e| e.to_string())?;
        let spec = CommandSpec::from_argv(&self.adapter.argv)
            .ok_or("empty adapter command")?
            .args(["--config", "mini/config.json", "--data", "mini/data.jsonl", "--out", "mini/out", "--mini"])
            .label("mini-run");
        let result = self
            .sandbox
            .execute(self.workspace, &spec, &self.limits, self.budget, self.events)
            .map_err(|e| e.to_string())?;
        Ok(MiniRunOutcome {
            exit_code: result.exit_code,
            timed_out: result.timed_out,
            outputs: check_outputs(&self.workspace.path("mini/out")),
            stderr_tail: tail(&result.stderr().unwrap_or_default()),
        })
    }
}
