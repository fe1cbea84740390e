//! Loads the demo task registry and queries task metadata by facet.
//!
//! cargo run --example registry_query

use std::path::Path;

use ftloop::data::Catalog;
use ftloop::eval::MetricRegistry;
use ftloop::registry::{Capabilities, TaskRegistry};

fn main() -> anyhow::Result<()> {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo");
    let catalog = Catalog::load_manifest(&demo.join("catalog.json"))?;
    let metrics = MetricRegistry::with_builtins();
    let registry = TaskRegistry::new(Capabilities::assemble(vec![], &metrics));
    registry.load_dir(&demo.join("tasks"), &catalog, &metrics)?;

    println!("tasks: {:?}", registry.task_ids());
    for facet in ["objective", "metrics", "budget"] {
        println!("capitals/{facet}: {}", registry.query_meta("capitals", facet)?);
    }
    match registry.query_meta("capitals", "colour") {
        Ok(v) => println!("unexpected: {v}"),
        Err(e) => println!("unknown facet rejected: {e}"),
    }
    Ok(())
}
