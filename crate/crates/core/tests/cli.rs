mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::{exe, fixtures};

fn ftloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(exe()).current_dir(dir).args(args).output().unwrap()
}

fn demo_dir() -> std::path::PathBuf {
    fixtures().join("demo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_finalizes_and_report_replays_it() {
    let out = tempfile::tempdir().unwrap();
    let o = ftloop(
        &demo_dir(),
        &[
            "run",
            "--task",
            "capitals",
            "--llm",
            "scripted:llm/capitals-5.txt",
            "--seed",
            "7",
            "--logical-clock",
            "--out",
            out.path().to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Finalized"));
    let run_dir = out.path().join("capitals-s7");
    assert!(run_dir.join("report.json").exists());

    let r = ftloop(&demo_dir(), &["report", run_dir.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).starts_with("loops: 5, improve_rate: 40%"), "{}", stdout(&r));
}

#[test]
fn concurrent_tasks_get_separate_run_directories() {
    let out = tempfile::tempdir().unwrap();
    let o = ftloop(
        &demo_dir(),
        &[
            "run",
            "--task",
            "capitals",
            "--task",
            "capitals-quick",
            "--llm",
            "scripted:llm/capitals-5.txt",
            "--logical-clock",
            "--out",
            out.path().to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for id in ["capitals-s0", "capitals-quick-s0"] {
        let events = std::fs::read_to_string(out.path().join(id).join("events.jsonl")).unwrap();
        assert!(events.lines().all(|l| l.contains(&format!("\"run_id\":\"{id}\""))));
    }
}

#[test]
fn run_exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let out_arg = out.path().to_str().unwrap();
    let unknown = ftloop(&demo_dir(), &["run", "--task", "nope", "--llm", "scripted:llm/capitals-5.txt", "--out", out_arg]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown task"));

    let aborted = ftloop(
        &demo_dir(),
        &["run", "--task", "capitals", "--llm", "scripted:llm/capitals-5.txt", "--wall-clock", "0", "--out", out_arg],
    );
    assert_eq!(aborted.status.code(), Some(2));
    assert!(out.path().join("capitals-s0/report.json").exists());

    let bad_llm = ftloop(&demo_dir(), &["run", "--task", "capitals", "--llm", "carrier-pigeon:x", "--out", out_arg]);
    assert_eq!(bad_llm.status.code(), Some(1));
}

#[test]
fn validate_exit_codes() {
    let ff = fixtures().join("failfast");
    let case = |name: &str, extra: &[&str]| {
        let dir = ff.join(name);
        let mut args = vec![
            "validate".to_string(),
            "--config".into(),
            dir.join("config.json").display().to_string(),
            "--data".into(),
            dir.join("data.jsonl").display().to_string(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ftloop(&ff, &args)
    };
    assert_eq!(case("pass_clean", &[]).status.code(), Some(0));
    assert_eq!(case("warn_skewed_labels", &[]).status.code(), Some(10));
    let hard = case("runtime_nan_loss", &[]);
    assert_eq!(hard.status.code(), Some(20));
    let report: serde_json::Value = serde_json::from_slice(&hard.stdout).unwrap();
    assert_eq!(report["verdict"], "hard_fail");
    let stats = ff.join("warn_high_filter_rate/case.json");
    let case_json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(stats).unwrap()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let stats_file = tmp.path().join("stats.json");
    std::fs::write(&stats_file, case_json["stats"].to_string()).unwrap();
    assert_eq!(
        case("warn_high_filter_rate", &["--stats", stats_file.to_str().unwrap()]).status.code(),
        Some(10)
    );
    let unreadable = ftloop(&ff, &["validate", "--config", "no/such.json", "--data", "pass_clean/data.jsonl"]);
    assert_eq!(unreadable.status.code(), Some(1));
}

#[test]
fn score_fixtures() {
    let dir = fixtures().join("score");
    let acc = ftloop(&dir, &["score", "--predictions", "accuracy_predictions.jsonl", "--gold", "accuracy_gold.jsonl"]);
    assert_eq!(stdout(&acc).trim(), "accuracy: 0.750000");
    let f1 = ftloop(
        &dir,
        &["score", "--predictions", "f1_predictions.jsonl", "--gold", "f1_gold.jsonl", "--metric", "macro-f1"],
    );
    assert_eq!(stdout(&f1).trim(), "macro-f1: 0.666667");
    let bad = ftloop(&dir, &["score", "--predictions", "mismatched_predictions.jsonl", "--gold", "accuracy_gold.jsonl"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no gold label"));
}

#[test]
fn report_fixtures() {
    let dir = fixtures().join("replay");
    let t = ftloop(&dir, &["report", "eight_loops"]);
    assert_eq!(t.status.code(), Some(0));
    assert!(stdout(&t).starts_with("loops: 8, improve_rate: 12.5%"));
    let e = ftloop(&dir, &["report", "empty"]);
    assert!(stdout(&e).starts_with("loops: 0, improve_rate: 0%"));
    let c = ftloop(&dir, &["report", "corrupt"]);
    assert_eq!(c.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&c.stderr).contains("line 5"));
}

#[test]
fn register_adds_a_spec_file() {
    let reg = tempfile::tempdir().unwrap();
    for f in std::fs::read_dir(demo_dir().join("tasks")).unwrap() {
        let p = f.unwrap().path();
        std::fs::copy(&p, reg.path().join(p.file_name().unwrap())).unwrap();
    }
    let args = ["register", "register_me.json", "--registry", reg.path().to_str().unwrap()];
    let first = ftloop(&demo_dir(), &args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(reg.path().join("capitals-extra.json").exists());
    let again = ftloop(&demo_dir(), &args);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already registered"));
}

fn http_get(addr: &str, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

#[test]
fn serve_answers_metadata_queries() {
    let runs = fixtures().join("replay");
    let mut child = Command::new(exe())
        .current_dir(demo_dir())
        .args(["serve", "--addr", "127.0.0.1:0", "--runs", runs.to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().trim_start_matches("listening on http://").to_string();

    let (status, body) = http_get(&addr, "/tasks/capitals/budget");
    assert_eq!(status, 200);
    let budget: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(budget["max_iterations"], 5);
    let (status, body) = http_get(&addr, "/tasks");
    assert_eq!(status, 200);
    assert!(body.contains("capitals-quick"));
    assert_eq!(http_get(&addr, "/tasks/capitals/colour").0, 400);
    assert_eq!(http_get(&addr, "/tasks/missing/objective").0, 404);
    assert_eq!(http_get(&addr, "/runs/eight_loops/report").0, 404);
    child.kill().unwrap();
    child.wait().unwrap();
}
