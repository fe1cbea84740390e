//! Deterministic stand-in trainer honoring the adapter contract.
//!
//! The "model" is a lookup table. An evaluation item is answered from the
//! training record with the same normalization key when there is one,
//! otherwise with the majority output among training records sharing its
//! `meta.skill` tag, otherwise with [`DEFAULT_ANSWER`]. Validation accuracy
//! is therefore a function of which skills the training data covers.
//!
//! Learning rates above 0.2 make the loss grow 25x per step; at 0.5 or
//! above the second step is NaN, `invalid_gradients` is set and the trainer
//! exits 4.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    AdapterDescriptor, AdapterManifest, ParamRange, PredictInput, EXIT_DATA_ERROR, EXIT_NUMERICAL_ERROR, LOSS_LOG,
    MANIFEST,
};
use crate::data::{normalization_key, DataRecord};
use crate::eval::{format_loss_log, LossPoint};
use crate::validate::TrainingConfig;

pub const TRAINER_SUBCOMMAND: &str = "mock-trainer";
pub const PREDICT_SUBCOMMAND: &str = "mock-predict";
pub const DEFAULT_ANSWER: &str = "unknown";
pub const MODEL_FILE: &str = "model.json";

pub const MINI_MAX_STEPS: u64 = 2;
pub const MINI_MAX_SAMPLES: usize = 16;
const MAX_STEPS: u64 = 200;
const EXIT_USAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mock-trainer", about = "Deterministic mock trainer")]
pub struct TrainerArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mini: bool,
    #[arg(long)]
    pub describe: bool,
    /// Sleep before writing outputs.
    #[arg(long)]
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Parser)]
#[command(name = "mock-predict", about = "Predictions from a mock model")]
pub struct PredictArgs {
    /// Model file; without one every answer is the default.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn descriptor(exe: &str) -> AdapterDescriptor {
    let ranges = BTreeMap::from([
        ("learning_rate".to_string(), ParamRange::open(0.0, 1.0)),
        ("batch_size".to_string(), ParamRange::closed(1.0, 1024.0)),
        ("grad_accumulation".to_string(), ParamRange::closed(1.0, 64.0)),
        ("epochs".to_string(), ParamRange::closed(1.0, 100.0)),
        ("max_steps".to_string(), ParamRange::closed(1.0, 100_000.0)),
        ("sequence_length_cap".to_string(), ParamRange::closed(16.0, 32_768.0)),
        ("eval_fraction".to_string(), ParamRange::open(0.0, 1.0)),
    ]);
    AdapterDescriptor {
        name: "mock".to_string(),
        ranges,
        methods: vec!["full".to_string(), "low-rank-adaptation".to_string()],
        baseline_predict_cmd: Some(vec![exe.to_string(), PREDICT_SUBCOMMAND.to_string()]),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockModel {
    pub by_key: BTreeMap<String, String>,
    pub by_skill: BTreeMap<String, String>,
    pub default: String,
}

impl MockModel {
    pub fn fit(records: &[DataRecord]) -> MockModel {
        let mut by_key = BTreeMap::new();
        let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for r in records {
            by_key.entry(r.normalization_key()).or_insert_with(|| r.output.trim().to_string());
            if let Some(skill) = r.meta.get("skill") {
                *counts.entry(skill).or_default().entry(r.output.trim()).or_default() += 1;
            }
        }
        let by_skill = counts
            .into_iter()
            .map(|(skill, outs)| {
                let mut best = ("", 0);
                for (out, n) in outs {
                    if n > best.1 {
                        best = (out, n);
                    }
                }
                (skill.to_string(), best.0.to_string())
            })
            .collect();
        MockModel {
            by_key,
            by_skill,
            default: DEFAULT_ANSWER.to_string(),
        }
    }

    pub fn answer(&self, instruction: &str, input: &str, meta: &BTreeMap<String, String>) -> String {
        if let Some(out) = self.by_key.get(&normalization_key(instruction, input)) {
            return out.clone();
        }
        meta.get("skill")
            .and_then(|s| self.by_skill.get(s))
            .cloned()
            .unwrap_or_else(|| self.default.clone())
    }
}

fn read_records(path: &Path) -> Result<Vec<DataRecord>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read data: {e}"))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DataRecord = serde_json::from_str(line).map_err(|e| format!("data line {}: {e}", i + 1))?;
        records.push(r);
    }
    Ok(records)
}

/// Loss trajectory of the mock trainer. Pure in its inputs.
pub fn loss_curve(config: &TrainingConfig, steps: u64, with_eval: bool) -> Vec<LossPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = 2.0 + 0.2 * rng.gen::<f64>();
    let rate = 0.12 + 0.06 * rng.gen::<f64>();
    let floor = 0.1;
    let overfit = config.epochs.is_some_and(|e| e >= 4);
    (1..=steps)
        .map(|step| {
            let s = (step - 1) as f64;
            let jitter = 1.0 + 0.02 * (2.0 * rng.gen::<f64>() - 1.0);
            let train_loss = if config.learning_rate >= 0.5 && step >= 2 {
                f64::NAN
            } else if config.learning_rate > 0.2 {
                start * 25f64.powf(s)
            } else {
                (start - floor) * (-rate * s).exp() * jitter + floor
            };
            let eval_loss = with_eval.then(|| {
                let late = (step as f64 / steps as f64 - 0.5).max(0.0);
                train_loss + 0.15 + if overfit { 1.2 * late } else { 0.0 }
            });
            LossPoint {
                step,
                train_loss,
                eval_loss,
            }
        })
        .collect()
}

fn artifact_id(model: &str, loss_log: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update(loss_log.as_bytes());
    format!("mock-{}", &hex::encode(h.finalize())[..12])
}

fn self_exe() -> String {
    std::env::current_exe()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|_| "ftloop".to_string())
}

pub fn run_trainer(args: &TrainerArgs) -> i32 {
    if args.describe {
        println!("{}", serde_json::to_string(&descriptor(&self_exe())).expect("descriptor serializes"));
        return 0;
    }
    let (Some(config_path), Some(data_path), Some(out)) = (&args.config, &args.data, &args.out) else {
        eprintln!("mock-trainer: --config, --data and --out are required");
        return EXIT_USAGE;
    };
    let config: TrainingConfig = match fs::read_to_string(config_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mock-trainer: bad config: {e}");
            return EXIT_USAGE;
        }
    };
    let problems = config.violations(None);
    if !problems.is_empty() {
        eprintln!("mock-trainer: config out of range: {}", problems[0].message);
        return EXIT_USAGE;
    }
    let mut records = match read_records(data_path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("mock-trainer: {e}");
            return EXIT_DATA_ERROR;
        }
    };
    if args.mini {
        records.truncate(MINI_MAX_SAMPLES);
    }
    if records.is_empty() {
        eprintln!("mock-trainer: no training records");
        return EXIT_DATA_ERROR;
    }
    if let Some(ms) = args.delay_ms {
        std::thread::sleep(Duration::from_millis(ms));
    }

    let n_eval = config.eval_records(records.len());
    let n_train = records.len() - n_eval;
    let per_step = (config.batch_size as usize * config.grad_accumulation as usize).max(1);
    let batches_per_epoch = n_train.div_ceil(per_step) as u64;
    let steps = if args.mini {
        MINI_MAX_STEPS.min(batches_per_epoch.max(1))
    } else {
        match (config.max_steps, config.epochs) {
            (Some(s), _) => s as u64,
            (None, Some(e)) => e as u64 * batches_per_epoch,
            (None, None) => batches_per_epoch,
        }
        .clamp(1, MAX_STEPS)
    };
    let loss = loss_curve(&config, steps, !args.mini && n_eval > 0);
    let invalid_gradients = loss.iter().any(|p| !p.train_loss.is_finite());
    let loss_text = format_loss_log(&loss);

    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("mock-trainer: cannot create output dir: {e}");
        return super::EXIT_RESOURCE_ERROR;
    }
    let model = MockModel::fit(&records[..n_train.max(1).min(records.len())]);
    let model_text = serde_json::to_string(&model).expect("model serializes");
    let model_path = out.join(MODEL_FILE);
    let manifest = AdapterManifest {
        artifact_id: artifact_id(&model_text, &loss_text),
        predict_cmd: vec![
            self_exe(),
            PREDICT_SUBCOMMAND.to_string(),
            "--model".to_string(),
            model_path.display().to_string(),
        ],
        invalid_gradients,
        batches: steps * config.grad_accumulation as u64,
        extra: BTreeMap::from([
            ("train_records".to_string(), json!(n_train)),
            ("eval_records".to_string(), json!(n_eval)),
            ("mini".to_string(), json!(args.mini)),
        ]),
    };
    let written = fs::write(out.join(LOSS_LOG), &loss_text)
        .and_then(|_| fs::write(&model_path, &model_text))
        .and_then(|_| {
            fs::write(
                out.join(MANIFEST),
                serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
            )
        });
    if let Err(e) = written {
        eprintln!("mock-trainer: cannot write outputs: {e}");
        return super::EXIT_RESOURCE_ERROR;
    }
    if invalid_gradients {
        eprintln!("mock-trainer: non-finite loss");
        return EXIT_NUMERICAL_ERROR;
    }
    0
}

pub fn run_predict(args: &PredictArgs) -> i32 {
    let model = match &args.model {
        Some(p) => match fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<MockModel>(&t).map_err(|e| e.to_string()))
        {
            Ok(m) => m,
            Err(e) => {
                eprintln!("mock-predict: bad model: {e}");
                return EXIT_DATA_ERROR;
            }
        },
        None => MockModel {
            default: DEFAULT_ANSWER.to_string(),
            ..Default::default()
        },
    };
    let text = match fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mock-predict: cannot read input: {e}");
            return EXIT_DATA_ERROR;
        }
    };
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: PredictInput = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("mock-predict: input line {}: {e}", i + 1);
                return EXIT_DATA_ERROR;
            }
        };
        let answer = model.answer(&item.instruction, &item.input, &item.meta);
        out.push_str(&json!({"instance_id": item.instance_id, "output": answer}).to_string());
        out.push('\n');
    }
    match fs::File::create(&args.output).and_then(|mut f| f.write_all(out.as_bytes())) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mock-predict: cannot write output: {e}");
            super::EXIT_RESOURCE_ERROR
        }
    }
}

/// Serves the mock subcommands from any binary: when the process was
/// started as `<exe> mock-trainer ...` or `<exe> mock-predict ...`, runs
/// the tool and exits. Otherwise returns. Call first thing in `main` of a
/// program that passes its own executable as the mock adapter.
pub fn dispatch_if_requested() {
    let args: Vec<String> = std::env::args().collect();
    let code = match args.get(1).map(String::as_str) {
        Some(TRAINER_SUBCOMMAND) => run_trainer(&TrainerArgs::parse_from(&args[1..])),
        Some(PREDICT_SUBCOMMAND) => run_predict(&PredictArgs::parse_from(&args[1..])),
        _ => return,
    };
    std::process::exit(code);
}
