//! Recomputes run telemetry from a recorded event stream.
//!
//! cargo run --example telemetry_replay [events.jsonl]

use std::path::PathBuf;

use ftloop::agent::{telemetry_from_events, IMPROVE_RATE_DEFINITION};
use ftloop::sandbox::events::read_events;

fn main() -> anyhow::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay/eight_loops/events.jsonl")
    });
    let events = read_events(&path)?;
    let telemetry = telemetry_from_events(&events)?;
    println!("{}", telemetry.render());
    println!("improve_rate: {IMPROVE_RATE_DEFINITION}");
    Ok(())
}
