//! Runs the complete agent loop on the demo capitals task with a scripted
//! language model and the built-in mock trainer.
//!
//! cargo run --example full_loop [out_dir]

use std::path::Path;
use std::sync::Arc;

use ftloop::adapter::{mock, Adapter};
use ftloop::agent::{run, RunConfig, RunInputs};
use ftloop::data::Catalog;
use ftloop::eval::MetricRegistry;
use ftloop::llm::Gateway;
use ftloop::registry::{Capabilities, TaskRegistry};
use ftloop::sandbox::LogicalClock;

fn main() -> anyhow::Result<()> {
    mock::dispatch_if_requested();
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo");
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ftloop-example-runs"));

    let adapter = Adapter::from_spec("mock", &std::env::current_exe()?)?;
    let catalog = Catalog::load_manifest(&demo.join("catalog.json"))?;
    let metrics = Arc::new(MetricRegistry::with_builtins());
    let registry = TaskRegistry::new(Capabilities::assemble(vec![adapter.descriptor.clone()], &metrics));
    registry.load_dir(&demo.join("tasks"), &catalog, &metrics)?;
    let gateway = Gateway::from_spec(&format!("scripted:{}", demo.join("llm/capitals-5.txt").display()))?;

    let mut config = RunConfig::new(&out, 7);
    config.clock = Arc::new(LogicalClock::new(1));
    let outcome = run(
        RunInputs {
            task: registry.get("capitals")?,
            catalog: &catalog,
            metrics,
            adapter: &adapter,
            gateway,
        },
        config,
    )?;
    println!("{}", outcome.report.render());
    println!("events: {}", outcome.events_path().display());
    println!("report: {}", outcome.report_path().display());
    Ok(())
}
