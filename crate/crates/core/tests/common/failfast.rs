use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ftloop::adapter::{mock, Adapter};
use ftloop::data::{DataStrategy, ProcessingStats};
use ftloop::sandbox::events::{kind, Event};
use ftloop::validate::{validate_standalone, StandaloneRequest, ValidationOptions, ValidationReport};
use serde::Deserialize;

use super::{fixtures, mock_adapter};

#[derive(Debug, Deserialize)]
pub struct Expect {
    pub verdict: String,
    pub stage: Option<String>,
    pub codes: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct Case {
    pub description: String,
    pub adapter: String,
    #[serde(default)]
    pub requires_reasoning: bool,
    pub stats: Option<ProcessingStats>,
    pub strategy: Option<DataStrategy>,
    pub expect: Expect,
}

pub struct CaseRun {
    pub name: String,
    pub case: Case,
    pub report: ValidationReport,
    pub events: Vec<Event>,
}

pub fn case_dirs() -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(fixtures().join("failfast"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("case.json").exists())
        .collect();
    dirs.sort();
    dirs
}

fn adapter_for(spec: &str) -> Adapter {
    match spec {
        "missing" => Adapter {
            argv: vec!["/nonexistent/ftloop-trainer".to_string()],
            descriptor: mock::descriptor("/nonexistent/ftloop-trainer"),
        },
        other => mock_adapter(other),
    }
}

pub fn run_case(dir: &Path, work: &Path) -> CaseRun {
    let case: Case = serde_json::from_str(&std::fs::read_to_string(dir.join("case.json")).unwrap()).unwrap();
    let adapter = adapter_for(&case.adapter);
    let request = StandaloneRequest {
        config_path: &dir.join("config.json"),
        data_path: &dir.join("data.jsonl"),
        adapter: &adapter,
        options: ValidationOptions {
            requires_reasoning_field: case.requires_reasoning,
            ..Default::default()
        },
        stats: case.stats.clone(),
        strategy: case.strategy.clone(),
        work_dir: work.to_path_buf(),
    };
    let (report, events) = validate_standalone(&request).unwrap();
    CaseRun {
        name: dir.file_name().unwrap().to_string_lossy().into_owned(),
        case,
        report,
        events,
    }
}

/// Every mismatch between a case's expectations and its run.
pub fn check_case(run: &CaseRun) -> Vec<String> {
    let mut problems = Vec::new();
    let r = &run.report;
    let e = &run.case.expect;
    if r.verdict.as_str() != e.verdict {
        problems.push(format!("verdict {} != {}", r.verdict.as_str(), e.verdict));
    }
    let failed = r.failed_stage().map(|s| s.as_str().to_string());
    if failed != e.stage {
        problems.push(format!("failed stage {failed:?} != {:?}", e.stage));
    }
    let codes: BTreeSet<&str> = r.codes().into_iter().collect();
    let want: BTreeSet<&str> = e.codes.iter().map(String::as_str).collect();
    if codes != want {
        problems.push(format!("codes {codes:?} != {want:?}"));
    }
    if let Some(pos) = r.stages.iter().position(|s| s.stage.as_str() == e.stage.as_deref().unwrap_or("")) {
        if r.stages[..pos].iter().any(|s| s.status != ftloop::validate::StageStatus::Pass) {
            problems.push("a stage before the failing one did not pass".into());
        }
        if r.stages[pos + 1..].iter().any(|s| s.status != ftloop::validate::StageStatus::Skipped) {
            problems.push("a stage after the failing one was not skipped".into());
        }
    }
    if run.events.iter().any(|ev| ev.event == kind::TRAIN_LAUNCH) {
        problems.push("validation launched training".into());
    }
    if e.stage.as_deref() == Some("static") && run.events.iter().any(|ev| ev.event == kind::PROCESS_START) {
        problems.push("static failure still spawned a process".into());
    }
    problems
}
