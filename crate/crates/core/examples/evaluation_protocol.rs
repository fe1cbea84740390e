//! Scores predictions with the two-phase protocol: validation any number of
//! times, then exactly one test submission after finalizing.
//!
//! cargo run --example evaluation_protocol

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use ftloop::eval::{Direction, EvalOptions, EvalProtocol, MetricBinding, MetricRegistry, Phase, Prediction, PredictionSet};
use ftloop::sandbox::{BudgetClock, SystemClock};

fn gold(prefix: &str) -> BTreeMap<String, String> {
    [("Paris", 0), ("Tokyo", 1), ("Rome", 2), ("Lima", 3)]
        .into_iter()
        .map(|(city, i)| (format!("{prefix}{i}"), city.to_string()))
        .collect()
}

fn predictions(prefix: &str, phase: Phase, answers: &[&str]) -> PredictionSet {
    PredictionSet {
        task_id: "capitals".into(),
        phase,
        items: answers
            .iter()
            .enumerate()
            .map(|(i, a)| Prediction {
                instance_id: format!("{prefix}{i}"),
                output: a.to_string(),
            })
            .collect(),
        model_ref: "example".into(),
    }
}

fn main() -> anyhow::Result<()> {
    let metrics = Arc::new(MetricRegistry::with_builtins());
    let mut protocol = EvalProtocol::new(
        gold("v"),
        gold("t"),
        vec![MetricBinding::primary("accuracy", Direction::HigherIsBetter)],
        metrics,
        EvalOptions::default(),
    );
    let budget = BudgetClock::new(Arc::new(SystemClock::new()), Duration::from_secs(60), None);

    let val = predictions("v", Phase::Validation, &["Paris", "Tokyo", "Milan", "Lima"]);
    let fb = protocol.submit_validation(&val, &[], &budget)?;
    println!("validation accuracy: {}", fb.aggregate["accuracy"]);

    let test = predictions("t", Phase::Test, &["Paris", "Kyoto", "Rome", "Lima"]);
    match protocol.submit_final_test(&test, budget.now()) {
        Ok(_) => println!("unexpected: test accepted before finalizing"),
        Err(e) => println!("test before finalizing refused: {e}"),
    }
    protocol.begin_finalizing()?;
    let result = protocol.submit_final_test(&test, budget.now())?;
    println!("test accuracy: {}", result.aggregate["accuracy"]);
    match protocol.submit_final_test(&test, budget.now()) {
        Ok(_) => println!("unexpected: second test accepted"),
        Err(e) => println!("second test refused: {e}"),
    }
    Ok(())
}
