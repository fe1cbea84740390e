//! Runs progressive validation over a few fail-fast fixture cases. This
//! binary doubles as the mock trainer, so no external adapter is needed.
//!
//! cargo run --example failfast_validation

use std::path::Path;

use ftloop::adapter::{mock, Adapter};
use ftloop::validate::{validate_standalone, StandaloneRequest, ValidationOptions};

fn main() -> anyhow::Result<()> {
    mock::dispatch_if_requested();
    let exe = std::env::current_exe()?;
    let adapter = Adapter::from_spec("mock", &exe)?;
    let cases = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/failfast");
    let work = std::env::temp_dir().join(format!("ftloop-example-failfast-{}", std::process::id()));

    for name in ["pass_clean", "static_learning_rate_range", "mini_malformed_line", "runtime_nan_loss", "warn_skewed_labels"] {
        let dir = cases.join(name);
        let request = StandaloneRequest {
            config_path: &dir.join("config.json"),
            data_path: &dir.join("data.jsonl"),
            adapter: &adapter,
            options: ValidationOptions::default(),
            stats: None,
            strategy: None,
            work_dir: work.join(name),
        };
        let (report, _events) = validate_standalone(&request)?;
        let codes: Vec<&str> = report.diagnostics.iter().map(|d| d.code.as_str()).collect();
        let stages: Vec<String> = report
            .stages
            .iter()
            .map(|s| format!("{}={:?}", s.stage.as_str(), s.status))
            .collect();
        println!("{name}: {} [{}] {codes:?}", report.verdict.as_str(), stages.join(" "));
    }
    std::fs::remove_dir_all(&work).ok();
    Ok(())
}
