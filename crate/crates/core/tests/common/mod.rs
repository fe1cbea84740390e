#![allow(dead_code)]

pub mod failfast;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ftloop::adapter::Adapter;
use ftloop::agent::{run, RunConfig, RunInputs, RunOutcome};
use ftloop::data::Catalog;
use ftloop::eval::MetricRegistry;
use ftloop::llm::Gateway;
use ftloop::registry::{Capabilities, TaskRegistry};
use ftloop::sandbox::LogicalClock;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ftloop"))
}

pub fn mock_adapter(spec: &str) -> Adapter {
    Adapter::from_spec(spec, &exe()).expect("mock adapter resolves")
}

pub struct Demo {
    pub catalog: Catalog,
    pub metrics: Arc<MetricRegistry>,
    pub registry: TaskRegistry,
}

pub fn demo() -> Demo {
    let dir = fixtures().join("demo");
    let catalog = Catalog::load_manifest(&dir.join("catalog.json")).unwrap();
    let metrics = Arc::new(MetricRegistry::with_builtins());
    let registry = TaskRegistry::new(Capabilities::assemble(vec![], &metrics));
    registry.load_dir(&dir.join("tasks"), &catalog, &metrics).unwrap();
    Demo {
        catalog,
        metrics,
        registry,
    }
}

pub fn demo_script() -> PathBuf {
    fixtures().join("demo/llm/capitals-5.txt")
}

/// Runs the capitals demo with a logical clock.
pub fn run_demo(out: &Path, seed: u64, adapter: &str, tweak: impl FnOnce(&mut RunConfig)) -> RunOutcome {
    let d = demo();
    let adapter = mock_adapter(adapter);
    let gateway = Gateway::from_spec(&format!("scripted:{}", demo_script().display())).unwrap();
    let mut config = RunConfig::new(out, seed);
    config.clock = Arc::new(LogicalClock::new(1));
    tweak(&mut config);
    run(
        RunInputs {
            task: d.registry.get("capitals").unwrap(),
            catalog: &d.catalog,
            metrics: d.metrics.clone(),
            adapter: &adapter,
            gateway,
        },
        config,
    )
    .unwrap()
}
