//! Builds validation and test splits from a pool source, then applies data
//! strategies that try to smuggle evaluation items into the training set.
//!
//! cargo run --example data_leakage

use std::collections::BTreeMap;
use std::path::Path;

use ftloop::data::{apply_strategy, Catalog, DataStrategy, EvalSplit};

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/leakage");
    let catalog = Catalog::load_manifest(&dir.join("catalog.json"))?;
    let strategies: BTreeMap<String, DataStrategy> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("strategies.json"))?)?;

    let split = EvalSplit::build(&catalog, "pool", 3, None)?;
    println!(
        "pool split: {} validation, {} test, {} exclusion keys",
        split.val.len(),
        split.test.len(),
        split.exclusion.len()
    );
    for (name, strategy) in &strategies {
        let set = apply_strategy(strategy, &catalog, &split.exclusion, 200, 3)?;
        let s = &set.stats;
        println!(
            "{name}: input {} retained {} excluded_by_leakage {} emitted {}",
            s.input_count, s.retained_count, s.excluded_by_leakage, s.emitted_count
        );
    }
    Ok(())
}
