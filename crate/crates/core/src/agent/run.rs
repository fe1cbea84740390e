use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use crate::adapter::{check_outputs, Adapter, PredictInput};
use crate::analysis::{decide, diagnose, distill, Decision, IterationRecord, DEFAULT_NARRATIVE_CAP};
use crate::data::synthesis::materialize_synthesis;
use crate::data::{apply_strategy, Catalog, EvalItem, EvalSplit, ProcessingStats, TrainSet};
use crate::eval::{
    gold_map, primary_binding, Direction, EvalOptions, EvalProtocol, MetricRegistry, ModelArtifact, Phase,
    PredictionSet,
};
use crate::llm::{Gateway, LlmError};
use crate::registry::TaskSpec;
use crate::sandbox::events::kind;
use crate::sandbox::{BudgetClock, CommandSpec, EventLog, Limits, Sandbox, SandboxError, Workspace};
use crate::validate::{progressive_validate, SandboxMiniRunner, ValidationInput, ValidationOptions, MINI_TIMEOUT};

use super::phase::{PhaseMachine, RunPhase};
use super::propose::{build_request, hypothesis_schema, parse_proposal, Plan, Proposal, ProposalContext};
use super::telemetry::{Telemetry, IMPROVE_RATE_DEFINITION};
use super::{
    BestRecord, ExperienceEntry, IterationRow, RunConfig, RunError, RunReport, RunStatus, StopReason, TestResult,
};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORT_FILE: &str = "report.json";

pub struct RunInputs<'a> {
    pub task: Arc<TaskSpec>,
    pub catalog: &'a Catalog,
    pub metrics: Arc<MetricRegistry>,
    pub adapter: &'a Adapter,
    pub gateway: Gateway,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub entries: Vec<ExperienceEntry>,
    pub run_dir: PathBuf,
}

impl RunOutcome {
    pub fn report_path(&self) -> PathBuf {
        self.run_dir.join(REPORT_FILE)
    }

    pub fn events_path(&self) -> PathBuf {
        self.run_dir.join(EVENTS_FILE)
    }
}

struct Best {
    iteration: i64,
    score: f64,
    plan: Plan,
}

/// Why an iteration ended early.
struct Crash {
    message: String,
}

impl Crash {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl From<SandboxError> for Crash {
    fn from(e: SandboxError) -> Self {
        Crash::new(e.to_string())
    }
}

impl From<std::io::Error> for Crash {
    fn from(e: std::io::Error) -> Self {
        Crash::new(e.to_string())
    }
}

struct Run<'a> {
    task: Arc<TaskSpec>,
    catalog: &'a Catalog,
    adapter: &'a Adapter,
    gateway: Gateway,
    config: RunConfig,
    run_id: String,
    sandbox: Sandbox,
    budget: BudgetClock,
    events: EventLog,
    phases: PhaseMachine,
    split: EvalSplit,
    protocol: EvalProtocol,
    primary: String,
    direction: Direction,
    max_samples: usize,
    max_iterations: Option<u32>,
    baseline: Option<f64>,
    baseline_test: Option<PredictionSet>,
    best: Option<Best>,
    best_history: Vec<BestRecord>,
    entries: Vec<ExperienceEntry>,
    test_cache: BTreeMap<i64, PredictionSet>,
    notices: Vec<String>,
    test: Option<TestResult>,
}

/// Runs the whole loop for one task and writes the event stream and report
/// under `<out_dir>/<task_id>-s<seed>/`, replacing an earlier run with the
/// same id.
pub fn run(inputs: RunInputs<'_>, config: RunConfig) -> Result<RunOutcome, RunError> {
    let task = inputs.task;
    let run_id = format!("{}-s{}", task.task_id, config.seed);
    let binding = primary_binding(&task.metrics)
        .map_err(|e| RunError::Setup(e.to_string()))?
        .clone();
    let pool = task
        .eval_pool()
        .ok_or_else(|| RunError::Setup("task has no data sources".into()))?;
    let split = EvalSplit::build(inputs.catalog, pool, config.seed, task.max_prompt_tokens)
        .map_err(|e| RunError::Setup(e.to_string()))?;
    let protocol = EvalProtocol::new(
        gold_map(&split.val),
        gold_map(&split.test),
        task.metrics.clone(),
        inputs.metrics,
        EvalOptions {
            extraction: task.answer_extraction.clone(),
            seed: config.seed,
            ..Default::default()
        },
    );

    let run_dir = config.out_dir.join(&run_id);
    if run_dir.exists() {
        std::fs::remove_dir_all(&run_dir)?;
    }
    let mut sandbox = Sandbox::new(&config.out_dir, inputs.catalog.files())?;
    sandbox.open_run(&run_id);
    let events = EventLog::to_file(&run_id, &run_dir.join(EVENTS_FILE))?;
    let wall_clock = config
        .wall_clock
        .unwrap_or(Duration::from_secs(task.budget.wall_clock_limit));
    let budget = BudgetClock::new(
        config.clock.clone(),
        wall_clock,
        config.spend_limit.or(task.budget.max_llm_spend),
    );

    let mut run = Run {
        max_samples: config.max_train_samples.unwrap_or(task.budget.max_train_samples),
        max_iterations: config.max_iterations.or(task.budget.max_iterations),
        primary: binding.metric_id,
        direction: binding.direction,
        task: task.clone(),
        catalog: inputs.catalog,
        adapter: inputs.adapter,
        gateway: inputs.gateway,
        run_id,
        sandbox,
        budget,
        events,
        phases: PhaseMachine::default(),
        split,
        protocol,
        baseline: None,
        baseline_test: None,
        best: None,
        best_history: Vec::new(),
        entries: Vec::new(),
        test_cache: BTreeMap::new(),
        notices: Vec::new(),
        test: None,
        config,
    };
    let report = run.execute();
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(run_dir.join(REPORT_FILE), text + "\n")?;
    run.sandbox.close_run(&run.run_id);
    Ok(RunOutcome {
        report,
        entries: run.entries,
        run_dir,
    })
}

impl Run<'_> {
    fn emit(&mut self, event: &str, detail: serde_json::Value) {
        let now = self.budget.now();
        self.events.emit(now, self.budget.iteration(), event, detail);
    }

    fn notice(&mut self, message: String) {
        self.emit(kind::NOTICE, json!({"message": message}));
        self.notices.push(message);
    }

    fn advance(&mut self, to: RunPhase) {
        self.phases.advance(to, &self.budget, &mut self.events);
    }

    fn worst(&self) -> f64 {
        match self.direction {
            Direction::HigherIsBetter => f64::NEG_INFINITY,
            Direction::LowerIsBetter => f64::INFINITY,
        }
    }

    fn execute(&mut self) -> RunReport {
        self.emit(
            kind::RUN_START,
            json!({
                "task_id": self.task.task_id,
                "seed": self.config.seed,
                "wall_clock_ms": self.budget.wall_clock_limit_ms(),
                "max_iterations": self.max_iterations,
                "val_items": self.split.val.len(),
                "test_items": self.split.test.len(),
            }),
        );
        self.run_baseline();
        let stop = self.iterate();
        let status = if stop == StopReason::WallClock {
            self.advance(RunPhase::Aborted);
            self.notice("wall-clock budget exhausted; run aborted without a test evaluation".into());
            RunStatus::Aborted
        } else {
            self.finalize();
            RunStatus::Finalized
        };
        self.budget.set_iteration(-1);
        self.emit(kind::RUN_END, json!({"status": status, "stop_reason": stop}));
        self.report(status, stop)
    }

    fn iterate(&mut self) -> StopReason {
        for t in 0.. {
            if self.budget.deadline_passed() {
                return StopReason::WallClock;
            }
            if self.budget.finalize_requested() || self.budget.spend_exhausted() {
                return StopReason::SpendLimit;
            }
            if self.max_iterations.is_some_and(|m| t >= i64::from(m)) {
                return StopReason::MaxIterations;
            }
            self.budget.set_iteration(t);
            let plan = match self.propose(t) {
                Ok(Proposal::Plan(p)) => Ok(p),
                Ok(Proposal::Stop { reason }) => {
                    self.notice(format!("agent requested stop: {reason}"));
                    return StopReason::AgentStop;
                }
                Err(e) => Err(e),
            };
            self.emit(kind::ITERATION_START, json!({}));
            let (entry, stop) = match plan {
                Ok(plan) => {
                    self.advance(RunPhase::Validating);
                    let entry = self.iteration(t, plan);
                    (entry, None)
                }
                Err(e) => {
                    let stop = match e {
                        LlmError::SpendLimitExceeded => Some(StopReason::SpendLimit),
                        LlmError::AllEndpointsFailed { .. } => Some(StopReason::LlmUnavailable),
                        _ => None,
                    };
                    self.advance(RunPhase::Proposing);
                    (self.crashed_entry(t, None, None, Crash::new(format!("proposal failed: {e}"))), stop)
                }
            };
            let detail = json!({
                "decision": entry.decision,
                "score": entry.feedback.as_ref().and_then(|f| f.score(&self.primary)),
                "verdict": entry.validation.as_ref().map(|v| v.verdict.as_str()),
                "cost": entry.cost,
            });
            self.emit(kind::ITERATION_END, detail);
            self.entries.push(entry);
            if let Some(stop) = stop {
                return stop;
            }
        }
        unreachable!("the iteration counter is unbounded")
    }

    fn propose(&mut self, t: i64) -> Result<Proposal, LlmError> {
        let catalog = self.catalog.summary();
        let remaining = self.budget.remaining();
        let budget_line = format!(
            "{} s wall clock left, at most {} training samples, {} iterations left",
            remaining / 1000,
            self.max_samples,
            self.max_iterations
                .map_or_else(|| "unlimited".to_string(), |m| (i64::from(m) - t).to_string())
        );
        let ctx = ProposalContext {
            task: &self.task,
            catalog: &catalog,
            iteration: t,
            baseline: self.baseline,
            best: self.best.as_ref().map(|b| (b.iteration, b.score, &b.plan)),
            budget_line,
        };
        let req = build_request(&ctx, &self.entries);
        let payload =
            self.gateway
                .complete_structured(&req, &hypothesis_schema(), &mut self.budget, &mut self.events)?;
        parse_proposal(&payload.fields, self.best.as_ref().map(|b| b.iteration))
            .map_err(|violation| LlmError::SchemaViolation { violation, attempts: 1 })
    }

    fn summary_record(&self, t: i64, plan: Option<&Plan>, decision: Decision, score: Option<f64>, diagnosis: &str) -> IterationRecord {
        IterationRecord {
            iteration: t,
            decision: Some(decision),
            primary_score: score,
            data_strategy: plan.map(|p| serde_json::to_string(&p.data_strategy).expect("strategy serializes")).unwrap_or_default(),
            training_config: plan.map(|p| p.training_config.to_string()).unwrap_or_default(),
            rationale: plan.map(|p| p.rationale.clone()).unwrap_or_default(),
            diagnosis: diagnosis.to_string(),
            raw_log: String::new(),
        }
    }

    fn crashed_entry(
        &mut self,
        t: i64,
        plan: Option<Plan>,
        validation: Option<crate::validate::ValidationReport>,
        crash: Crash,
    ) -> ExperienceEntry {
        let record = self.summary_record(t, plan.as_ref(), Decision::Crashed, None, &crash.message);
        ExperienceEntry {
            iteration: t,
            plan,
            validation,
            feedback: None,
            diagnosis: None,
            summary: distill(&record, self.config.summary_cap),
            decision: Decision::Crashed,
            cost: self.budget.cost_of_iteration(t),
            artifact: None,
            crash: Some(crash.message),
        }
    }

    fn iteration(&mut self, t: i64, plan: Plan) -> ExperienceEntry {
        let now = self.budget.now();
        let mut ws = match self.sandbox.create_workspace(&self.run_id, t, now) {
            Ok(ws) => ws,
            Err(e) => {
                self.advance(RunPhase::Proposing);
                return self.crashed_entry(t, Some(plan), None, e.into());
            }
        };
        self.emit(kind::WORKSPACE, json!({"dir": Workspace::dir_name(t)}));

        let seed = self.config.seed.wrapping_add(t as u64);
        let (train_set, strategy_error) = match apply_strategy(
            &plan.data_strategy,
            self.catalog,
            &self.split.exclusion,
            self.max_samples,
            seed,
        ) {
            Ok(set) => (set, None),
            Err(e) => {
                let stats = match &e {
                    crate::data::DataError::EmptyResult(s) => s.clone(),
                    _ => ProcessingStats::default(),
                };
                (TrainSet { records: Vec::new(), stats }, Some(e))
            }
        };
        let mut records = train_set.records;
        if strategy_error.is_none() && !plan.data_strategy.synthesis_requests.is_empty() {
            let valid_requests = plan
                .data_strategy
                .synthesis_requests
                .iter()
                .all(|r| r.validation_rule.is_some());
            if valid_requests {
                match materialize_synthesis(
                    &mut records,
                    &plan.data_strategy.synthesis_requests,
                    &mut self.gateway,
                    &mut self.budget,
                    &mut self.events,
                ) {
                    Ok(stats) => self.emit(kind::NOTICE, json!({"synthesis": stats})),
                    Err(e) => {
                        self.advance(RunPhase::Proposing);
                        return self.crashed_entry(t, Some(plan), None, Crash::new(format!("synthesis failed: {e}")));
                    }
                }
            }
        }
        let written = std::fs::write(ws.path("train.jsonl"), crate::data::records_to_jsonl(&records)).and_then(|_| {
            std::fs::write(
                ws.path("config.json"),
                serde_json::to_string_pretty(&plan.training_config).expect("config serializes"),
            )
        });
        if let Err(e) = written {
            self.advance(RunPhase::Proposing);
            return self.crashed_entry(t, Some(plan), None, e.into());
        }

        let options = ValidationOptions {
            requires_reasoning_field: self.task.requires_reasoning_field,
            seed,
            ..Default::default()
        };
        let data_path = ws.path("train.jsonl");
        let report = {
            let input = ValidationInput {
                config: &plan.training_config,
                data_path: &data_path,
                stats: Some(&train_set.stats),
                strategy: Some(&plan.data_strategy),
                strategy_error: strategy_error.as_ref(),
                adapter: self.adapter.into(),
            };
            let mut runner = SandboxMiniRunner {
                sandbox: &self.sandbox,
                workspace: &mut ws,
                budget: &self.budget,
                events: &mut self.events,
                adapter: self.adapter,
                limits: Limits {
                    timeout: MINI_TIMEOUT,
                    ..Default::default()
                },
            };
            progressive_validate(&input, &options, &mut runner)
        };
        self.emit(
            kind::VALIDATION,
            json!({
                "verdict": report.verdict.as_str(),
                "failed_stage": report.failed_stage().map(|s| s.as_str()),
                "codes": report.codes(),
                "retained": train_set.stats.retained_count,
            }),
        );
        if !report.verdict.allows_training() {
            self.advance(RunPhase::Proposing);
            let digest: Vec<String> = report.hard().map(|d| format!("{} at {}: {}", d.code, d.locus, d.message)).collect();
            let record = self.summary_record(t, Some(&plan), Decision::FailedValidation, None, &digest.join("; "));
            return ExperienceEntry {
                iteration: t,
                plan: Some(plan),
                validation: Some(report),
                feedback: None,
                diagnosis: None,
                summary: distill(&record, self.config.summary_cap),
                decision: Decision::FailedValidation,
                cost: self.budget.cost_of_iteration(t),
                artifact: None,
                crash: None,
            };
        }

        self.advance(RunPhase::Training);
        let trained = self.train(&mut ws, records.len());
        let (artifact, outputs) = match trained {
            Ok(v) => v,
            Err(crash) => {
                self.advance(RunPhase::Proposing);
                return self.crashed_entry(t, Some(plan), Some(report), crash);
            }
        };

        self.advance(RunPhase::Evaluating);
        let predict_cmd = outputs.manifest.predict_cmd.clone();
        let evaluated = self.predict_both(&mut ws, &predict_cmd, &artifact.artifact_id).and_then(|(val, test)| {
            self.emit(kind::SUBMIT_VALIDATION, json!({"model_ref": artifact.artifact_id}));
            self.protocol
                .submit_validation(&val, &outputs.loss, &self.budget)
                .map(|fb| (fb, test))
                .map_err(|e| Crash::new(format!("validation submission failed: {e}")))
        });
        let (feedback, test_preds) = match evaluated {
            Ok(v) => v,
            Err(crash) => {
                self.advance(RunPhase::Proposing);
                return self.crashed_entry(t, Some(plan), Some(report), crash);
            }
        };
        self.test_cache.insert(t, test_preds);

        self.advance(RunPhase::Diagnosing);
        let diagnosis = diagnose(&feedback, &self.config.loss_rules, DEFAULT_NARRATIVE_CAP);
        let score = feedback.score(&self.primary);
        let decision = match score {
            Some(s) if s.is_finite() => decide(
                s,
                self.best.as_ref().map(|b| b.score),
                self.baseline.unwrap_or_else(|| self.worst()),
                self.direction,
            ),
            _ => Decision::Rejected,
        };
        if decision == Decision::Accepted {
            let s = score.expect("accepted implies a score");
            self.emit(
                kind::BEST_UPDATE,
                json!({"score": s, "previous": self.best.as_ref().map(|b| b.score), "parent": plan.parent_best_iteration}),
            );
            self.best = Some(Best {
                iteration: t,
                score: s,
                plan: plan.clone(),
            });
            self.best_history.push(BestRecord { iteration: t, score: s });
        }
        let record = self.summary_record(t, Some(&plan), decision, score, &diagnosis.narrative);
        let summary = distill(&record, self.config.summary_cap);
        self.advance(RunPhase::Proposing);
        ExperienceEntry {
            iteration: t,
            plan: Some(plan),
            validation: Some(report),
            feedback: Some(feedback),
            diagnosis: Some(diagnosis),
            summary,
            decision,
            cost: self.budget.cost_of_iteration(t),
            artifact: Some(artifact),
            crash: None,
        }
    }

    fn train(&mut self, ws: &mut Workspace, records: usize) -> Result<(ModelArtifact, crate::adapter::AdapterOutputs), Crash> {
        self.emit(kind::TRAIN_LAUNCH, json!({"records": records}));
        let spec = CommandSpec::from_argv(&self.adapter.argv)
            .ok_or_else(|| Crash::new("empty adapter command"))?
            .args(["--config", "config.json", "--data", "train.jsonl", "--out", "model"])
            .label("train");
        let limits = Limits {
            timeout: self.config.train_timeout,
            ..Default::default()
        };
        let result = self.sandbox.execute(ws, &spec, &limits, &self.budget, &mut self.events)?;
        if result.timed_out {
            return Err(Crash::new("training timed out"));
        }
        if !result.success() {
            let tail = result.stderr().unwrap_or_default();
            return Err(Crash::new(format!(
                "training exited with {}: {}",
                result.exit_code,
                tail.trim().lines().last().unwrap_or("")
            )));
        }
        let outputs = check_outputs(&ws.path("model")).map_err(|e| Crash::new(format!("adapter contract: {e}")))?;
        let artifact = ModelArtifact {
            artifact_id: outputs.manifest.artifact_id.clone(),
            produced_by_iteration: ws.iteration,
            manifest_path: PathBuf::from(Workspace::dir_name(ws.iteration)).join("model").join(crate::adapter::MANIFEST),
        };
        Ok((artifact, outputs))
    }

    fn predict(
        &mut self,
        ws: &mut Workspace,
        predict_cmd: &[String],
        items: &[EvalItem],
        phase: Phase,
        model_ref: &str,
    ) -> Result<PredictionSet, Crash> {
        let name = match phase {
            Phase::Validation => "val",
            Phase::Test => "test",
        };
        std::fs::create_dir_all(ws.path("eval"))?;
        let mut input = String::new();
        for it in items {
            let line = PredictInput {
                instance_id: it.instance_id.clone(),
                instruction: it.record.instruction.clone(),
                input: it.record.input.clone(),
                meta: it.record.meta.clone(),
            };
            input.push_str(&serde_json::to_string(&line).expect("input serializes"));
            input.push('\n');
        }
        let input_rel = format!("eval/{name}.jsonl");
        let output_rel = format!("eval/{name}.pred.jsonl");
        std::fs::write(ws.path(&input_rel), input)?;
        let spec = CommandSpec::from_argv(predict_cmd)
            .ok_or_else(|| Crash::new("empty predict command"))?
            .args(["--input", input_rel.as_str(), "--output", output_rel.as_str()])
            .label(format!("predict-{name}"));
        let limits = Limits {
            timeout: self.config.predict_timeout,
            ..Default::default()
        };
        let result = self.sandbox.execute(ws, &spec, &limits, &self.budget, &mut self.events)?;
        if !result.success() || result.timed_out {
            return Err(Crash::new(format!("prediction on {name} exited with {}", result.exit_code)));
        }
        let text = std::fs::read_to_string(ws.path(&output_rel))?;
        PredictionSet::from_jsonl(&self.task.task_id, phase, model_ref, &text)
            .map_err(|e| Crash::new(format!("predictions on {name}: {e}")))
    }

    /// Validation predictions to score now and test predictions to keep
    /// for finalization.
    fn predict_both(
        &mut self,
        ws: &mut Workspace,
        predict_cmd: &[String],
        model_ref: &str,
    ) -> Result<(PredictionSet, PredictionSet), Crash> {
        let val_items = self.split.val.clone();
        let test_items = self.split.test.clone();
        let val = self.predict(ws, predict_cmd, &val_items, Phase::Validation, model_ref)?;
        let test = self.predict(ws, predict_cmd, &test_items, Phase::Test, model_ref)?;
        Ok((val, test))
    }

    fn run_baseline(&mut self) {
        self.budget.set_iteration(-1);
        let Some(cmd) = self.adapter.descriptor.baseline_predict_cmd.clone() else {
            self.notice("adapter has no baseline predict command; baseline score unavailable".into());
            return;
        };
        let now = self.budget.now();
        let mut ws = match self.sandbox.create_workspace(&self.run_id, -1, now) {
            Ok(ws) => ws,
            Err(e) => {
                self.notice(format!("baseline skipped: {e}"));
                return;
            }
        };
        let result = self.predict_both(&mut ws, &cmd, "baseline").and_then(|(val, test)| {
            self.emit(kind::SUBMIT_VALIDATION, json!({"model_ref": "baseline"}));
            self.protocol
                .submit_validation(&val, &[], &self.budget)
                .map(|fb| (fb, test))
                .map_err(|e| Crash::new(e.to_string()))
        });
        match result {
            Ok((fb, test)) => {
                self.baseline = fb.score(&self.primary);
                self.baseline_test = Some(test);
                self.emit(kind::NOTICE, json!({"baseline_score": self.baseline}));
            }
            Err(c) => self.notice(format!("baseline evaluation failed: {}", c.message)),
        }
    }

    fn finalize(&mut self) {
        self.budget.set_iteration(-1);
        self.advance(RunPhase::Finalizing);
        self.protocol
            .begin_finalizing()
            .expect("the loop finalizes exactly once");
        let choice = match &self.best {
            Some(b) => self.test_cache.get(&b.iteration).cloned().map(|p| (p, Some(b.iteration))),
            None => None,
        };
        let choice = match choice {
            Some(c) => Some(c),
            None => {
                let fallback = self.baseline_test.clone();
                let msg = if fallback.is_some() {
                    "no iteration improved on the baseline; submitting the baseline model to the test split"
                } else {
                    "no iteration improved on the baseline and no baseline predictions exist; test evaluation skipped"
                };
                self.notice(msg.into());
                fallback.map(|p| (p, None))
            }
        };
        if let Some((preds, iteration)) = choice {
            let now = self.budget.now();
            match self.protocol.submit_final_test(&preds, now) {
                Ok(fb) => {
                    self.emit(
                        kind::SUBMIT_TEST,
                        json!({"model_ref": fb.model_ref, "iteration": iteration, "aggregate": fb.aggregate}),
                    );
                    self.test = Some(TestResult {
                        model_ref: fb.model_ref,
                        iteration,
                        aggregate: fb.aggregate,
                    });
                }
                Err(e) => self.notice(format!("test evaluation failed: {e}")),
            }
        }
        self.advance(RunPhase::Finalized);
    }

    fn report(&self, status: RunStatus, stop: StopReason) -> RunReport {
        let decisions: Vec<Decision> = self.entries.iter().map(|e| e.decision).collect();
        RunReport {
            run_id: self.run_id.clone(),
            task_id: self.task.task_id.clone(),
            seed: self.config.seed,
            status,
            stop_reason: stop,
            primary_metric: self.primary.clone(),
            direction: self.direction,
            baseline_score: self.baseline,
            best: self.best.as_ref().map(|b| BestRecord {
                iteration: b.iteration,
                score: b.score,
            }),
            best_history: self.best_history.clone(),
            no_improvement: self.best.is_none(),
            telemetry: Telemetry::from_ledger(&decisions, self.budget.ledger()),
            improve_rate_definition: IMPROVE_RATE_DEFINITION.to_string(),
            iterations: self
                .entries
                .iter()
                .map(|e| IterationRow {
                    iteration: e.iteration,
                    decision: e.decision,
                    score: e.feedback.as_ref().and_then(|f| f.score(&self.primary)),
                    verdict: e.validation.as_ref().map(|v| v.verdict.as_str().to_string()),
                    cost: e.cost,
                    summary: e.summary.render(),
                })
                .collect(),
            test: self.test.clone(),
            notices: self.notices.clone(),
            ledger: self.budget.ledger().to_vec(),
            events_file: EVENTS_FILE.to_string(),
        }
    }
}
