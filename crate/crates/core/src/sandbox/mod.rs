//! Sandboxed execution: isolated per-iteration workspaces, resource-limited
//! external processes, the budget clock and the run event stream.
//!
//! Isolation is directory-plus-environment scoping: each process runs with
//! its workspace as working directory, a cleared environment, its own process
//! group, and may only be handed absolute paths inside its workspace or the
//! read-only catalog. The runtime enforces wall-clock and output-size limits;
//! other resource limits are passed through to the adapter as environment.

pub mod budget;
pub mod clock;
pub mod events;
mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use budget::{BudgetClock, BudgetError, LedgerEntry, Money};
pub use clock::{Clock, LogicalClock, SystemClock};
pub use events::{Event, EventLog};
pub use workspace::Workspace;

use events::kind;

pub const DEFAULT_MAX_OUTPUT_BYTES: u64 = 4 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("run {0} is not active")]
    RunInactive(String),
    #[error("workspace storage failure: {0}")]
    StorageFailure(String),
    #[error("deadline passed; process not started")]
    DeadlinePassed,
    #[error("argument {0:?} escapes the workspace")]
    PathEscape(String),
    #[error("failed to spawn {program}: {source}")]
    Spawn { program: String, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Executable plus arguments. No shell interpretation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    /// Short label used for log file names and events.
    #[serde(default)]
    pub label: String,
}

impl CommandSpec {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            env: BTreeMap::new(),
            label: "proc".to_string(),
        }
    }

    /// Builds a spec from an argv vector (`argv[0]` is the program).
    pub fn from_argv(argv: &[String]) -> Option<Self> {
        let (program, args) = argv.split_first()?;
        Some(Self {
            program: program.clone(),
            args: args.to_vec(),
            env: BTreeMap::new(),
            label: "proc".to_string(),
        })
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub timeout: Duration,
    pub max_output_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(3600),
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExecutionResult {
    /// Process exit code; `128 + signal` when terminated by a signal.
    pub exit_code: i32,
    pub duration: Duration,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub resource_peaks: BTreeMap<String, u64>,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    pub fn stdout(&self) -> io::Result<String> {
        std::fs::read_to_string(&self.stdout_path)
    }

    pub fn stderr(&self) -> io::Result<String> {
        std::fs::read_to_string(&self.stderr_path)
    }
}

/// Owns the workspace tree for any number of runs.
#[derive(Debug)]
pub struct Sandbox {
    base: PathBuf,
    catalog_files: Vec<(String, PathBuf)>,
    active: BTreeSet<String>,
    passthrough_env: BTreeMap<String, String>,
}

impl Sandbox {
    /// `catalog_files` are exposed read-only (as symlinks) in every workspace.
    pub fn new(base: impl Into<PathBuf>, catalog_files: Vec<(String, PathBuf)>) -> io::Result<Self> {
        let base = base.into();
        std::fs::create_dir_all(&base)?;
        let base = base.canonicalize()?;
        let catalog_files = catalog_files
            .into_iter()
            .map(|(name, p)| {
                let p = p.canonicalize().unwrap_or(p);
                (name, p)
            })
            .collect();
        let mut passthrough_env = BTreeMap::new();
        if let Ok(path) = std::env::var("PATH") {
            passthrough_env.insert("PATH".to_string(), path);
        }
        Ok(Self {
            base,
            catalog_files,
            active: BTreeSet::new(),
            passthrough_env,
        })
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn open_run(&mut self, run_id: &str) {
        self.active.insert(run_id.to_string());
    }

    pub fn close_run(&mut self, run_id: &str) {
        self.active.remove(run_id);
    }

    pub fn is_active(&self, run_id: &str) -> bool {
        self.active.contains(run_id)
    }

    pub fn create_workspace(&self, run_id: &str, iteration: i64, now: u64) -> Result<Workspace, SandboxError> {
        if !self.is_active(run_id) {
            return Err(SandboxError::RunInactive(run_id.to_string()));
        }
        let root = self.base.join(run_id).join(Workspace::dir_name(iteration));
        if root.exists() {
            return Err(SandboxError::StorageFailure(format!(
                "workspace {} already exists",
                root.display()
            )));
        }
        let storage = |e: io::Error| SandboxError::StorageFailure(e.to_string());
        std::fs::create_dir_all(&root).map_err(storage)?;
        let catalog = root.join("catalog");
        std::fs::create_dir_all(&catalog).map_err(storage)?;
        for (name, target) in &self.catalog_files {
            std::os::unix::fs::symlink(target, catalog.join(name)).map_err(storage)?;
        }
        Ok(Workspace {
            run_id: run_id.to_string(),
            iteration,
            root_path: root,
            created_at: now,
            exec_count: 0,
        })
    }

    fn check_paths(&self, ws: &Workspace, spec: &CommandSpec) -> Result<(), SandboxError> {
        for arg in &spec.args {
            let p = Path::new(arg);
            if p.is_absolute() {
                let inside_ws = p.starts_with(&ws.root_path);
                let in_catalog = self.catalog_files.iter().any(|(_, c)| p == c);
                if !inside_ws && !in_catalog {
                    return Err(SandboxError::PathEscape(arg.clone()));
                }
                if p.components().any(|c| c == Component::ParentDir) {
                    return Err(SandboxError::PathEscape(arg.clone()));
                }
            } else if arg.contains('/') && p.components().any(|c| c == Component::ParentDir) {
                return Err(SandboxError::PathEscape(arg.clone()));
            }
        }
        Ok(())
    }

    /// Runs `spec` in `ws`. Refuses to spawn once the run deadline has
    /// passed; the timeout is additionally capped by the remaining budget.
    pub fn execute(
        &self,
        ws: &mut Workspace,
        spec: &CommandSpec,
        limits: &Limits,
        budget: &BudgetClock,
        events: &mut EventLog,
    ) -> Result<ExecutionResult, SandboxError> {
        self.check_paths(ws, spec)?;
        let now = budget.now();
        if budget.deadline_passed_at(now) {
            events.emit(
                now,
                ws.iteration,
                kind::PROCESS_REFUSED,
                json!({"label": spec.label, "reason": "deadline"}),
            );
            return Err(SandboxError::DeadlinePassed);
        }
        let timeout = limits
            .timeout
            .min(Duration::from_millis(budget.remaining_at(now)));

        ws.exec_count += 1;
        let logs = ws.root_path.join("logs");
        std::fs::create_dir_all(&logs)?;
        let stem = format!("{:03}-{}", ws.exec_count, sanitize(&spec.label));
        let stdout_path = logs.join(format!("{stem}.stdout"));
        let stderr_path = logs.join(format!("{stem}.stderr"));
        let tmp = ws.root_path.join("tmp");
        std::fs::create_dir_all(&tmp)?;

        let mut cmd = Command::new(&spec.program);
        cmd.args(&spec.args)
            .current_dir(&ws.root_path)
            .env_clear()
            .envs(&self.passthrough_env)
            .env("HOME", &ws.root_path)
            .env("TMPDIR", &tmp)
            .envs(&spec.env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);

        events.emit(
            now,
            ws.iteration,
            kind::PROCESS_START,
            json!({"label": spec.label, "workspace": Workspace::dir_name(ws.iteration)}),
        );
        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
            program: spec.program.clone(),
            source,
        })?;
        let pid = child.id() as i32;

        let out_pipe = child.stdout.take().expect("piped stdout");
        let err_pipe = child.stderr.take().expect("piped stderr");
        let cap = limits.max_output_bytes;
        let out_file = File::create(&stdout_path)?;
        let err_file = File::create(&stderr_path)?;
        let out_thread = thread::spawn(move || capture(out_pipe, out_file, cap));
        let err_thread = thread::spawn(move || capture(err_pipe, err_file, cap));

        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if started.elapsed() >= timeout {
                timed_out = true;
                // SAFETY: kill(2) on our own child's process group.
                unsafe {
                    libc::kill(-pid, libc::SIGKILL);
                }
                break child.wait()?;
            }
            thread::sleep(Duration::from_millis(2));
        };
        let duration = started.elapsed();
        let stdout_truncated = out_thread.join().unwrap_or(Ok(false))?;
        let stderr_truncated = err_thread.join().unwrap_or(Ok(false))?;

        let exit_code = status
            .code()
            .unwrap_or_else(|| 128 + status.signal().unwrap_or(0));
        let end = budget.now();
        events.emit(
            end,
            ws.iteration,
            kind::PROCESS_END,
            json!({"label": spec.label, "exit_code": exit_code, "timed_out": timed_out}),
        );
        Ok(ExecutionResult {
            exit_code,
            duration,
            stdout_path,
            stderr_path,
            timed_out,
            stdout_truncated,
            stderr_truncated,
            resource_peaks: BTreeMap::new(),
        })
    }
}

fn sanitize(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "proc".to_string()
    } else {
        s
    }
}

/// Copies `src` into `dst` up to `cap` bytes, then drains the rest.
/// Returns whether output was truncated.
fn capture(mut src: impl Read, mut dst: File, cap: u64) -> io::Result<bool> {
    let mut written: u64 = 0;
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        let n = match src.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        if written < cap {
            let take = ((cap - written) as usize).min(n);
            dst.write_all(&buf[..take])?;
            written += take as u64;
            if take < n {
                truncated = true;
            }
        } else {
            truncated = true;
        }
    }
    if truncated {
        write!(dst, "\n[output truncated at {cap} bytes]\n")?;
    }
    dst.flush()?;
    Ok(truncated)
}
