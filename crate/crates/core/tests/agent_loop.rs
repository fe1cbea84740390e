mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use ftloop::agent::{run, RunConfig, RunInputs, RunOutcome, RunStatus, StopReason};
use ftloop::analysis::Decision;
use ftloop::llm::{Gateway, RecordingSleeper, ScriptedBackend};
use ftloop::sandbox::events::{kind, read_events};
use ftloop::sandbox::{LogicalClock, Money};

use common::{demo, demo_script, mock_adapter};

/// Responses of the demo script, in order.
fn demo_responses() -> Vec<String> {
    let text = std::fs::read_to_string(demo_script()).unwrap();
    text.split("### response\n").skip(1).map(|s| s.trim().to_string()).collect()
}

fn script(responses: &[&str]) -> String {
    let mut text = String::new();
    for r in responses {
        text.push_str("### response\n");
        text.push_str(r);
        text.push('\n');
    }
    text
}

fn run_with(out: &Path, script_text: &str, gateway: impl FnOnce(Gateway) -> Gateway, tweak: impl FnOnce(&mut RunConfig)) -> RunOutcome {
    let d = demo();
    let adapter = mock_adapter("mock");
    let mut config = RunConfig::new(out, 1);
    config.clock = Arc::new(LogicalClock::new(1));
    tweak(&mut config);
    run(
        RunInputs {
            task: d.registry.get("capitals").unwrap(),
            catalog: &d.catalog,
            metrics: d.metrics.clone(),
            adapter: &adapter,
            gateway: gateway(Gateway::scripted(ScriptedBackend::parse(script_text))),
        },
        config,
    )
    .unwrap()
}

#[test]
fn stop_proposal_finalizes_with_the_baseline() {
    let out = tempfile::tempdir().unwrap();
    let o = run_with(out.path(), &script(&[r#"{"stop": true, "reason": "nothing left to try"}"#]), |g| g, |_| {});
    let r = &o.report;
    assert_eq!((r.status, r.stop_reason), (RunStatus::Finalized, StopReason::AgentStop));
    assert!(r.iterations.is_empty());
    assert_eq!(r.telemetry.loops, 0);
    assert!(r.no_improvement && r.best.is_none());
    let test = r.test.as_ref().expect("baseline is evaluated on test");
    assert_eq!(test.iteration, None);
    assert!(r.notices.iter().any(|n| n.contains("baseline")));
    assert_eq!(r.telemetry.total_cost, r.ledger.iter().map(|e| e.amount).sum::<Money>());
}

#[test]
fn exhausted_llm_ends_the_loop_and_finalizes() {
    let out = tempfile::tempdir().unwrap();
    let first = demo_responses()[0].clone();
    let o = run_with(out.path(), &script(&[&first]), |g| g, |_| {});
    let r = &o.report;
    assert_eq!((r.status, r.stop_reason), (RunStatus::Finalized, StopReason::LlmUnavailable));
    assert_eq!(r.iterations.len(), 2);
    assert_eq!(r.iterations[0].decision, Decision::Accepted);
    assert_eq!(r.iterations[1].decision, Decision::Crashed);
    assert_eq!(r.test.as_ref().unwrap().iteration, Some(0));
}

#[test]
fn spend_limit_requests_finalization() {
    let out = tempfile::tempdir().unwrap();
    let responses = demo_responses();
    let refs: Vec<&str> = responses.iter().map(String::as_str).collect();
    let o = run_with(out.path(), &script(&refs), |g| g, |c| c.spend_limit = Some("0.001".parse().unwrap()));
    let r = &o.report;
    assert_eq!((r.status, r.stop_reason), (RunStatus::Finalized, StopReason::SpendLimit));
    assert_eq!(r.iterations.len(), 1);
    assert_eq!(r.ledger.len(), 1);
    assert_eq!(r.telemetry.total_cost, r.ledger[0].amount);
    assert!(r.test.is_some());
}

#[test]
fn transient_failures_are_retried_with_linear_backoff() {
    let out = tempfile::tempdir().unwrap();
    let first = demo_responses()[0].clone();
    let sleeper = RecordingSleeper::default();
    let delays = sleeper.delays.clone();
    let o = run_with(
        out.path(),
        &script(&["!transient", "!transient", &first]),
        |g| g.with_sleeper(Box::new(sleeper)),
        |c| c.max_iterations = Some(1),
    );
    assert_eq!(o.report.iterations[0].decision, Decision::Accepted);
    assert_eq!(*delays.lock().unwrap(), vec![Duration::from_secs(2), Duration::from_secs(4)]);
    let events = read_events(&o.events_path()).unwrap();
    assert_eq!(events.iter().filter(|e| e.event == kind::LLM_RETRY).count(), 2);
}

#[test]
fn hard_failed_only_run_keeps_no_best_and_tests_the_baseline() {
    let out = tempfile::tempdir().unwrap();
    let exploding = demo_responses()[2].clone();
    let o = run_with(out.path(), &script(&[&exploding]), |g| g, |c| c.max_iterations = Some(1));
    let r = &o.report;
    assert_eq!(r.iterations[0].decision, Decision::FailedValidation);
    assert_eq!(r.iterations[0].verdict.as_deref(), Some("hard_fail"));
    assert!(r.best.is_none() && r.no_improvement);
    assert_eq!(r.test.as_ref().unwrap().iteration, None);
    let events = read_events(&o.events_path()).unwrap();
    assert!(!events.iter().any(|e| e.event == kind::TRAIN_LAUNCH));
}

#[test]
fn repair_recovers_a_malformed_proposal() {
    let out = tempfile::tempdir().unwrap();
    let responses = demo_responses();
    let o = run_with(
        out.path(),
        &script(&[&responses[3], &responses[4]]),
        |g| g,
        |c| c.max_iterations = Some(1),
    );
    let r = &o.report;
    assert_eq!(r.iterations.len(), 1);
    assert_ne!(r.iterations[0].decision, Decision::Crashed);
    assert_eq!(r.ledger.len(), 2);
}

#[test]
fn rerunning_a_run_id_replaces_its_directory() {
    let out = tempfile::tempdir().unwrap();
    let first = demo_responses()[0].clone();
    let a = run_with(out.path(), &script(&[&first]), |g| g, |c| c.max_iterations = Some(1));
    let stale = a.run_dir.join("stale.txt");
    std::fs::write(&stale, "x").unwrap();
    let b = run_with(out.path(), &script(&[&first]), |g| g, |c| c.max_iterations = Some(1));
    assert_eq!(a.run_dir, b.run_dir);
    assert!(!stale.exists());
    assert_eq!(a.report, b.report);
}
