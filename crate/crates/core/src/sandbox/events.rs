//! Append-only, line-delimited run event stream.
//!
//! The stream is the audit source for run invariants: no process start after
//! the deadline, no full-training launch without a passing validation report,
//! and telemetry replay.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub mod kind {
    pub const RUN_START: &str = "run_start";
    pub const RUN_END: &str = "run_end";
    pub const PHASE: &str = "phase";
    pub const ITERATION_START: &str = "iteration_start";
    pub const ITERATION_END: &str = "iteration_end";
    pub const WORKSPACE: &str = "workspace";
    pub const PROCESS_START: &str = "process_start";
    pub const PROCESS_END: &str = "process_end";
    pub const PROCESS_REFUSED: &str = "process_refused";
    pub const TRAIN_LAUNCH: &str = "train_launch";
    pub const VALIDATION: &str = "validation";
    pub const CHARGE: &str = "charge";
    pub const LLM_RETRY: &str = "llm_retry";
    pub const SUBMIT_VALIDATION: &str = "submit_validation";
    pub const SUBMIT_TEST: &str = "submit_test";
    pub const BEST_UPDATE: &str = "best_update";
    pub const NOTICE: &str = "notice";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts: u64,
    pub run_id: String,
    pub iteration: i64,
    pub event: String,
    #[serde(default)]
    pub detail: Value,
}

#[derive(Debug, Error)]
pub enum EventStreamError {
    #[error("cannot read event stream: {0}")]
    Io(#[from] io::Error),
    #[error("corrupted event stream at line {line}: {message}")]
    Corrupted { line: usize, message: String },
}

#[derive(Debug)]
pub struct EventLog {
    run_id: String,
    events: Vec<Event>,
    sink: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn in_memory(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            events: Vec::new(),
            sink: None,
        }
    }

    /// Creates (truncating) `path` and mirrors every event to it.
    pub fn to_file(run_id: impl Into<String>, path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?;
        Ok(Self {
            run_id: run_id.into(),
            events: Vec::new(),
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn emit(&mut self, ts: u64, iteration: i64, event: &str, detail: Value) {
        let ev = Event {
            ts,
            run_id: self.run_id.clone(),
            iteration,
            event: event.to_string(),
            detail,
        };
        if let Some(sink) = self.sink.as_mut() {
            // The in-memory copy stays authoritative if the disk mirror fails.
            let line = serde_json::to_string(&ev).expect("event serializes");
            let _ = writeln!(sink, "{line}").and_then(|_| sink.flush());
        }
        self.events.push(ev);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn parse_events(text: &str) -> Result<Vec<Event>, EventStreamError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(line).map_err(|e| EventStreamError::Corrupted {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(ev);
    }
    Ok(events)
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, EventStreamError> {
    let reader = BufReader::new(File::open(path)?);
    let mut text = String::new();
    for line in reader.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_events(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_mirror_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::to_file("r1", &path).unwrap();
        log.emit(1, -1, kind::RUN_START, json!({"task": "t"}));
        log.emit(2, 0, kind::ITERATION_START, Value::Null);
        let disk = std::fs::read_to_string(&path).unwrap();
        assert_eq!(disk, log.to_jsonl());
        assert_eq!(read_events(&path).unwrap(), log.events());
    }

    #[test]
    fn corrupted_line_reports_line_number() {
        let text = "{\"ts\":1,\"run_id\":\"r\",\"iteration\":0,\"event\":\"x\"}\nnot json\n";
        match parse_events(text) {
            Err(EventStreamError::Corrupted { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
