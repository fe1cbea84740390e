mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;

use ftloop::adapter::{
    check_outputs, mock, Adapter, ContractViolation, PredictInput, EXIT_DATA_ERROR, EXIT_NUMERICAL_ERROR, LOSS_LOG,
    MANIFEST,
};

use common::{exe, fixtures, mock_adapter};

fn case_file(case: &str, file: &str) -> PathBuf {
    fixtures().join("failfast").join(case).join(file)
}

fn train(adapter: &Adapter, config: &Path, data: &Path, out: &Path, mini: bool) -> i32 {
    let (program, rest) = adapter.argv.split_first().unwrap();
    let mut cmd = Command::new(program);
    cmd.args(rest).arg("--config").arg(config).arg("--data").arg(data).arg("--out").arg(out);
    if mini {
        cmd.arg("--mini");
    }
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn describe_reports_ranges_and_methods() {
    let a = mock_adapter("mock");
    assert!(a.descriptor.methods.iter().any(|m| m == "full"));
    assert!(a.descriptor.ranges.contains_key("learning_rate"));
    assert!(a.descriptor.baseline_predict_cmd.is_some());
    assert!(Adapter::from_spec("mock:delay=x", &exe()).is_err());
}

#[test]
fn successful_training_writes_conforming_outputs() {
    let a = mock_adapter("mock");
    let out = tempfile::tempdir().unwrap();
    let code = train(&a, &case_file("pass_clean", "config.json"), &case_file("pass_clean", "data.jsonl"), out.path(), false);
    assert_eq!(code, 0);
    let outputs = check_outputs(out.path()).unwrap();
    assert!(!outputs.manifest.invalid_gradients);
    assert!(outputs.loss.iter().all(|p| p.train_loss.is_finite()));

    let input = out.path().join("input.jsonl");
    let item = PredictInput {
        instance_id: "q1".into(),
        instruction: "What is the capital of France? (variant 0)".into(),
        input: String::new(),
        meta: Default::default(),
    };
    std::fs::write(&input, serde_json::to_string(&item).unwrap() + "\n").unwrap();
    let output = out.path().join("predictions.jsonl");
    let (program, rest) = outputs.manifest.predict_cmd.split_first().unwrap();
    let status = Command::new(program).args(rest).arg("--input").arg(&input).arg("--output").arg(&output).status().unwrap();
    assert!(status.success());
    let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&output).unwrap().trim()).unwrap();
    assert_eq!(line["instance_id"], "q1");
    assert_eq!(line["output"], "Paris");
}

#[test]
fn mini_runs_are_capped() {
    let a = mock_adapter("mock");
    let out = tempfile::tempdir().unwrap();
    let code = train(&a, &case_file("pass_clean", "config.json"), &case_file("pass_clean", "data.jsonl"), out.path(), true);
    assert_eq!(code, 0);
    let outputs = check_outputs(out.path()).unwrap();
    assert!(outputs.loss.len() as u64 <= mock::MINI_MAX_STEPS);
    assert!(outputs.loss.iter().all(|p| p.eval_loss.is_none()));
    assert_eq!(outputs.manifest.extra["mini"], true);
}

#[test]
fn identical_inputs_give_identical_artifacts() {
    let a = mock_adapter("mock");
    let ids: Vec<String> = (0..2)
        .map(|_| {
            let out = tempfile::tempdir().unwrap();
            let code =
                train(&a, &case_file("pass_clean", "config.json"), &case_file("pass_clean", "data.jsonl"), out.path(), false);
            assert_eq!(code, 0);
            check_outputs(out.path()).unwrap().manifest.artifact_id
        })
        .collect();
    assert_eq!(ids[0], ids[1]);
}

#[test]
fn failure_exit_codes() {
    let a = mock_adapter("mock");
    let out = tempfile::tempdir().unwrap();
    let nan = train(&a, &case_file("runtime_nan_loss", "config.json"), &case_file("runtime_nan_loss", "data.jsonl"), out.path(), false);
    assert_eq!(nan, EXIT_NUMERICAL_ERROR);
    assert!(check_outputs(out.path()).unwrap().manifest.invalid_gradients);

    let empty = tempfile::tempdir().unwrap();
    let code = train(&a, &case_file("pass_clean", "config.json"), &case_file("static_empty_data", "data.jsonl"), empty.path(), false);
    assert_eq!(code, EXIT_DATA_ERROR);
    assert_eq!(check_outputs(empty.path()), Err(ContractViolation::Missing(LOSS_LOG)));
}

#[test]
fn external_script_adapters_are_checked_against_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("trainer.sh");
    std::fs::write(
        &script,
        r#"#!/bin/sh
if [ "$1" = "--describe" ]; then
  echo '{"name":"script","methods":["full"]}'
  exit 0
fi
while [ $# -gt 0 ]; do
  case "$1" in --out) out="$2"; shift;; esac
  shift
done
mkdir -p "$out"
printf 'step 1 train_loss 2.0\nstep 2 train_loss 1.0 eval_loss 1.1\n' > "$out/loss.log"
echo '{"artifact_id":"s1","predict_cmd":["/bin/true"]}' > "$out/manifest"
"#,
    )
    .unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let a = Adapter::from_spec(script.to_str().unwrap(), &exe()).unwrap();
    assert_eq!(a.descriptor.name, "script");

    let out = dir.path().join("out");
    let code = train(&a, &case_file("pass_clean", "config.json"), &case_file("pass_clean", "data.jsonl"), &out, false);
    assert_eq!(code, 0);
    let outputs = check_outputs(&out).unwrap();
    assert_eq!(outputs.loss.len(), 2);
    assert_eq!(outputs.manifest.artifact_id, "s1");

    std::fs::write(out.join(MANIFEST), r#"{"artifact_id":"s1","predict_cmd":[]}"#).unwrap();
    assert!(matches!(check_outputs(&out), Err(ContractViolation::Manifest(_))));
    std::fs::write(out.join(LOSS_LOG), "step 1 train_loss 2.0\nstep 1 train_loss 1.0\n").unwrap();
    assert!(matches!(check_outputs(&out), Err(ContractViolation::StepOrder(2))));
}
