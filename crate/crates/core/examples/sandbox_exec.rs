//! Executes commands inside an isolated workspace under a wall-clock
//! budget, and shows the refusals the sandbox enforces.
//!
//! cargo run --example sandbox_exec

use std::sync::Arc;
use std::time::Duration;

use ftloop::sandbox::{BudgetClock, CommandSpec, EventLog, Limits, LogicalClock, Sandbox};

fn main() -> anyhow::Result<()> {
    let base = std::env::temp_dir().join(format!("ftloop-example-sandbox-{}", std::process::id()));
    let mut sandbox = Sandbox::new(&base, vec![])?;
    sandbox.open_run("example");
    let clock = Arc::new(LogicalClock::manual());
    let budget = BudgetClock::new(clock.clone(), Duration::from_millis(1000), None);
    let mut events = EventLog::in_memory("example");
    let mut ws = sandbox.create_workspace("example", 0, budget.now())?;
    println!("workspace: {}", ws.root_path.display());

    let echo = CommandSpec::new("sh").args(["-c", "echo hello from $(pwd)"]).label("echo");
    let result = sandbox.execute(&mut ws, &echo, &Limits::default(), &budget, &mut events)?;
    println!("exit {}: {}", result.exit_code, result.stdout()?.trim());

    let escape = CommandSpec::new("cat").arg("/etc/passwd").label("escape");
    match sandbox.execute(&mut ws, &escape, &Limits::default(), &budget, &mut events) {
        Ok(_) => println!("unexpected: escape allowed"),
        Err(e) => println!("path escape refused: {e}"),
    }

    clock.advance(1000);
    match sandbox.execute(&mut ws, &echo, &Limits::default(), &budget, &mut events) {
        Ok(_) => println!("unexpected: ran after the deadline"),
        Err(e) => println!("after the deadline: {e}"),
    }
    for e in events.events() {
        println!("event {} at {} ms", e.event, e.ts);
    }
    sandbox.close_run("example");
    std::fs::remove_dir_all(&base).ok();
    Ok(())
}
