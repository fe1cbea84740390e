//! Requests a structured reply through the gateway with a scripted backend.
//! The first reply is malformed, so the gateway asks for a repair.
//!
//! cargo run --example llm_gateway

use std::sync::Arc;
use std::time::Duration;

use ftloop::agent::hypothesis_schema;
use ftloop::llm::{templates, Gateway, LlmRequest, ScriptedBackend};
use ftloop::sandbox::{BudgetClock, EventLog, LogicalClock};

fn main() -> anyhow::Result<()> {
    let backend = ScriptedBackend::new(vec![
        "I think we should add more data.".to_string(),
        r#"Here it is: {"reason": "few examples", "hypothesis": "more data helps",
            "implementation_task": {"data_strategy": {"source_selection": ["qa"], "sample_budget": 40},
            "training_config": {"method": "lora", "learning_rate": 0.001, "batch_size": 4, "epochs": 2}}}"#
            .to_string(),
    ]);
    let prompts = backend.prompts();
    let mut gateway = Gateway::scripted(backend);

    let mut request = LlmRequest::new(templates::HYPOTHESIS);
    for name in gateway.templates().variables(templates::HYPOTHESIS) {
        request = request.var(name.clone(), format!("<{name}>"));
    }
    let mut budget = BudgetClock::new(Arc::new(LogicalClock::new(1)), Duration::from_secs(60), None);
    let mut events = EventLog::in_memory("example");
    let payload = gateway.complete_structured(&request, &hypothesis_schema(), &mut budget, &mut events)?;

    println!("repairs: {}", payload.repairs);
    println!("cost: {}", payload.cost);
    println!("hypothesis: {}", payload.fields["hypothesis"]);
    println!("prompts sent: {}", prompts.lock().unwrap().len());
    for entry in budget.ledger() {
        println!("ledger: {} {}", entry.amount, entry.memo);
    }
    Ok(())
}
