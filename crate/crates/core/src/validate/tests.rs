use super::*;
use crate::adapter::mock;
use crate::adapter::{AdapterManifest, AdapterOutputs};
use crate::sandbox::events::EventLog;
use serde_json::json;
use std::path::PathBuf;

struct FakeRunner {
    calls: usize,
    exit_code: i32,
    loss: Vec<f64>,
    invalid_gradients: bool,
}

impl FakeRunner {
    fn healthy() -> Self {
        Self {
            calls: 0,
            exit_code: 0,
            loss: vec![2.0, 1.8],
            invalid_gradients: false,
        }
    }
}

impl MiniRunner for FakeRunner {
    fn run_mini(&mut self, _config: &TrainingConfig, sample: &[DataRecord]) -> Result<MiniRunOutcome, String> {
        assert!(sample.len() <= 16);
        self.calls += 1;
        let loss = self
            .loss
            .iter()
            .enumerate()
            .map(|(i, &l)| LossPoint {
                step: i as u64 + 1,
                train_loss: l,
                eval_loss: None,
            })
            .collect();
        Ok(MiniRunOutcome {
            exit_code: self.exit_code,
            timed_out: false,
            outputs: Ok(AdapterOutputs {
                loss,
                manifest: AdapterManifest {
                    artifact_id: "fake".into(),
                    predict_cmd: vec!["p".into()],
                    invalid_gradients: self.invalid_gradients,
                    batches: 2,
                    extra: Default::default(),
                },
            }),
            stderr_tail: String::new(),
        })
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    argv: Vec<String>,
    descriptor: AdapterDescriptor,
}

fn fixture(lines: &[Value]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.jsonl");
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&data, body).unwrap();
    Fixture {
        _dir: dir,
        data,
        argv: vec!["/bin/sh".into()],
        descriptor: mock::descriptor("/bin/sh"),
    }
}

fn varied(n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| json!({"instruction": format!("Question {i}?"), "output": format!("Answer {i}.")}))
        .collect()
}

fn good_config() -> Value {
    json!({"method": "lora", "learning_rate": 0.0002, "batch_size": 8, "epochs": 2, "eval_fraction": 0.1})
}

fn input<'a>(f: &'a Fixture, config: &'a Value) -> ValidationInput<'a> {
    ValidationInput {
        config,
        data_path: &f.data,
        stats: None,
        strategy: None,
        strategy_error: None,
        adapter: AdapterRef {
            argv: &f.argv,
            descriptor: Some(&f.descriptor),
        },
    }
}

fn statuses(r: &ValidationReport) -> Vec<StageStatus> {
    r.stages.iter().map(|s| s.status).collect()
}

#[test]
fn zero_learning_rate_fails_statically() {
    let f = fixture(&varied(20));
    let mut cfg = good_config();
    cfg["learning_rate"] = json!(0.0);
    let mut runner = FakeRunner::healthy();
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut runner);
    assert_eq!(statuses(&r), vec![StageStatus::Fail, StageStatus::Skipped, StageStatus::Skipped]);
    assert_eq!(r.verdict, Verdict::HardFail);
    assert!(r.codes().iter().all(|c| *c == code::CONFIG_RANGE));
    assert_eq!(runner.calls, 0);
}

#[test]
fn missing_data_path() {
    let mut f = fixture(&varied(20));
    f.data = f.data.with_file_name("nope.jsonl");
    let cfg = good_config();
    let (stage, _) = validate_static(&input(&f, &cfg));
    assert_eq!(stage.status, StageStatus::Fail);
    assert_eq!(stage.diagnostics[0].code, code::PATH_MISSING);
}

#[test]
fn valid_config_passes_static_without_diagnostics() {
    let f = fixture(&varied(20));
    let cfg = good_config();
    let (stage, parsed) = validate_static(&input(&f, &cfg));
    assert_eq!(stage.status, StageStatus::Pass);
    assert!(stage.diagnostics.is_empty());
    assert!(parsed.is_some());
}

#[test]
fn adapter_ranges_and_resolvability() {
    let mut f = fixture(&varied(20));
    let mut cfg = good_config();
    cfg["batch_size"] = json!(4096);
    let (stage, _) = validate_static(&input(&f, &cfg));
    assert_eq!(stage.diagnostics.len(), 1);
    assert_eq!(stage.diagnostics[0].locus, "config.batch_size");

    f.argv = vec!["/nonexistent/adapter".into()];
    let (stage, _) = validate_static(&input(&f, &good_config()));
    assert_eq!(stage.diagnostics[0].code, code::PATH_MISSING);
}

#[test]
fn high_filter_rate_is_soft() {
    let f = fixture(&varied(27));
    let cfg = good_config();
    let stats = ProcessingStats {
        input_count: 1800,
        retained_count: 27,
        filtered_by_rule: vec![1773],
        emitted_count: 27,
        ..Default::default()
    };
    let mut inp = input(&f, &cfg);
    inp.stats = Some(&stats);
    let r = progressive_validate(&inp, &ValidationOptions::default(), &mut FakeRunner::healthy());
    assert_eq!(r.verdict, Verdict::PassWithWarnings);
    assert_eq!(r.codes(), vec![code::HIGH_FILTER_RATE]);
    assert!(r.diagnostics[0].message.contains("0.015"));
}

#[test]
fn zero_records_is_hard_at_mini_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blank.jsonl");
    std::fs::write(&data, "\n\n").unwrap();
    let f = Fixture {
        data,
        _dir: dir,
        argv: vec!["/bin/sh".into()],
        descriptor: mock::descriptor("/bin/sh"),
    };
    let cfg = good_config();
    let mut runner = FakeRunner::healthy();
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut runner);
    assert_eq!(statuses(&r), vec![StageStatus::Pass, StageStatus::Fail, StageStatus::Skipped]);
    assert_eq!(r.codes(), vec![code::EMPTY_DATASET]);
    assert_eq!(runner.calls, 0);
}

#[test]
fn missing_reasoning_is_hard() {
    let lines: Vec<Value> = (0..20)
        .map(|i| json!({"instruction": format!("Sum {i} and 1"), "output": format!("{}", i + 1)}))
        .collect();
    let f = fixture(&lines);
    let cfg = good_config();
    let opts = ValidationOptions {
        requires_reasoning_field: true,
        ..Default::default()
    };
    let r = progressive_validate(&input(&f, &cfg), &opts, &mut FakeRunner::healthy());
    assert_eq!(r.failed_stage(), Some(Stage::MiniRun));
    assert!(r.codes().iter().all(|c| *c == code::FORMAT_VIOLATION));
    assert_eq!(sentence_segments("First add. Then carry the one."), 2);
}

#[test]
fn skewed_outputs_warn() {
    let lines: Vec<Value> = (0..20)
        .map(|i| json!({"instruction": format!("Is {i} prime?"), "output": if i == 3 { "yes" } else { "no" }}))
        .collect();
    let f = fixture(&lines);
    let cfg = good_config();
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut FakeRunner::healthy());
    assert_eq!(r.verdict, Verdict::PassWithWarnings);
    assert_eq!(r.codes(), vec![code::SKEWED_DISTRIBUTION]);
}

#[test]
fn runtime_rules() {
    let opts = ValidationOptions::default();
    let t = |loss: &[f64], invalid: bool| MiniTelemetry {
        exit_code: 0,
        loss: loss
            .iter()
            .enumerate()
            .map(|(i, &l)| LossPoint {
                step: i as u64 + 1,
                train_loss: l,
                eval_loss: None,
            })
            .collect(),
        invalid_gradients: invalid,
        batches: 2,
    };
    let exploding = validate_runtime_sanity(&t(&[2.0, 45.0], false), &opts);
    assert_eq!(exploding.diagnostics[0].code, code::EXPLODING_LOSS);
    let invalid = validate_runtime_sanity(&t(&[2.0, 1.9], true), &opts);
    assert_eq!(invalid.diagnostics[0].code, code::INVALID_GRADIENTS);
    let fine = validate_runtime_sanity(&t(&[2.0, 1.8], false), &opts);
    assert_eq!(fine.status, StageStatus::Pass);
    let nan = validate_runtime_sanity(&t(&[2.0, f64::NAN], false), &opts);
    assert_eq!(nan.diagnostics[0].code, code::EXPLODING_LOSS);
    let mut empty = t(&[2.0, 1.8], false);
    empty.batches = 0;
    assert_eq!(validate_runtime_sanity(&empty, &opts).diagnostics[0].code, code::EMPTY_DATASET);
}

#[test]
fn mini_data_error_exit_is_format_violation() {
    let f = fixture(&varied(20));
    let cfg = good_config();
    let mut runner = FakeRunner {
        exit_code: 2,
        ..FakeRunner::healthy()
    };
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut runner);
    assert_eq!(statuses(&r), vec![StageStatus::Pass, StageStatus::Fail, StageStatus::Skipped]);
    assert_eq!(r.codes(), vec![code::FORMAT_VIOLATION]);

    let mut runner = FakeRunner {
        exit_code: 3,
        ..FakeRunner::healthy()
    };
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut runner);
    assert_eq!(r.codes(), vec![code::MINI_RUN_FAILED]);
}

#[test]
fn numerical_exit_reaches_runtime_stage() {
    let f = fixture(&varied(20));
    let cfg = good_config();
    let mut runner = FakeRunner {
        exit_code: 4,
        loss: vec![2.0, f64::NAN],
        invalid_gradients: true,
        calls: 0,
    };
    let r = progressive_validate(&input(&f, &cfg), &ValidationOptions::default(), &mut runner);
    assert_eq!(statuses(&r), vec![StageStatus::Pass, StageStatus::Pass, StageStatus::Fail]);
    assert_eq!(r.codes(), vec![code::EXPLODING_LOSS, code::INVALID_GRADIENTS]);
}

#[test]
fn gate_audit() {
    let mut log = EventLog::in_memory("r");
    log.emit(1, 0, kind::VALIDATION, json!({"verdict": "pass"}));
    log.emit(2, 0, kind::TRAIN_LAUNCH, json!({}));
    log.emit(3, 1, kind::VALIDATION, json!({"verdict": "hard_fail"}));
    assert!(audit_gate_soundness(log.events()).is_empty());
    log.emit(4, 1, kind::TRAIN_LAUNCH, json!({}));
    log.emit(5, 2, kind::TRAIN_LAUNCH, json!({}));
    let bad: Vec<i64> = audit_gate_soundness(log.events()).iter().map(|e| e.iteration).collect();
    assert_eq!(bad, vec![1, 2]);
}
