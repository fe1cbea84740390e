use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    Full,
    #[serde(rename = "low-rank-adaptation", alias = "lora")]
    LowRankAdaptation,
}

impl TrainMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMethod::Full => "full",
            TrainMethod::LowRankAdaptation => "low-rank-adaptation",
        }
    }
}

/// Hyperparameters of one fine-tuning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub method: TrainMethod,
    pub learning_rate: f64,
    pub batch_size: u32,
    #[serde(default = "one")]
    pub grad_accumulation: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u32>,
    #[serde(default = "default_seq_cap")]
    pub sequence_length_cap: u32,
    #[serde(default = "default_prompt_format")]
    pub prompt_format: String,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u32 {
    1
}
fn default_seq_cap() -> u32 {
    2048
}
fn default_prompt_format() -> String {
    "alpaca".to_string()
}
fn default_eval_fraction() -> f64 {
    0.1
}

/// A violated config invariant: offending field and explanation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl TrainingConfig {
    /// Number of held-out records carved from a training set of size `n`.
    pub fn eval_records(&self, n: usize) -> usize {
        (n as f64 * self.eval_fraction).floor() as usize
    }

    /// Checks the type-level invariants. `train_records` enables the
    /// eval-fraction check against a concrete set size.
    pub fn violations(&self, train_records: Option<usize>) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(ConfigViolation {
                field: field.to_string(),
                message,
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            bad("learning_rate", format!("{} is outside (0, 1)", self.learning_rate));
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("grad_accumulation", self.grad_accumulation),
            ("sequence_length_cap", self.sequence_length_cap),
        ] {
            if v == 0 {
                bad(field, "must be positive".to_string());
            }
        }
        match (self.epochs, self.max_steps) {
            (Some(_), Some(_)) => bad("epochs", "set exactly one of epochs and max_steps".to_string()),
            (None, None) => bad("epochs", "one of epochs and max_steps is required".to_string()),
            (Some(0), _) => bad("epochs", "must be positive".to_string()),
            (_, Some(0)) => bad("max_steps", "must be positive".to_string()),
            _ => {}
        }
        if self.prompt_format.trim().is_empty() {
            bad("prompt_format", "empty template id".to_string());
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            bad("eval_fraction", format!("{} is outside (0, 1)", self.eval_fraction));
        } else if let Some(n) = train_records.filter(|n| *n > 0) {
            if self.eval_records(n) == 0 {
                bad(
                    "eval_fraction",
                    format!("{} of {n} records yields no eval record", self.eval_fraction),
                );
            }
        }
        out
    }

    /// Numeric parameters by name, for comparison with adapter ranges.
    pub fn numeric_params(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size as f64),
            ("grad_accumulation", self.grad_accumulation as f64),
            ("sequence_length_cap", self.sequence_length_cap as f64),
            ("eval_fraction", self.eval_fraction),
        ];
        if let Some(e) = self.epochs {
            v.push(("epochs", e as f64));
        }
        if let Some(s) = self.max_steps {
            v.push(("max_steps", s as f64));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainingConfig {
        serde_json::from_str(r#"{"method":"lora","learning_rate":0.0002,"batch_size":8,"epochs":2}"#).unwrap()
    }

    #[test]
    fn defaults_and_aliases() {
        let c = sample();
        assert_eq!(c.method, TrainMethod::LowRankAdaptation);
        assert_eq!(c.grad_accumulation, 1);
        assert_eq!(c.eval_fraction, 0.1);
        assert!(c.violations(Some(100)).is_empty());
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["method"], "low-rank-adaptation");
    }

    #[test]
    fn invariant_violations() {
        let mut c = sample();
        c.learning_rate = 0.0;
        c.max_steps = Some(10);
        let fields: Vec<String> = c.violations(None).into_iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["learning_rate", "epochs"]);

        let mut c = sample();
        c.eval_fraction = 0.05;
        assert_eq!(c.violations(Some(19)).len(), 1);
        assert!(c.violations(Some(20)).is_empty());
        assert!(c.violations(Some(0)).is_empty());
    }
}
