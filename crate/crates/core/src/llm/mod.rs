//! LLM gateway: template rendering, endpoint pooling with retries, token
//! accounting against the run budget, and schema-checked JSON replies.

mod backend;
mod structured;
pub mod templates;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::sandbox::events::kind;
use crate::sandbox::{BudgetClock, EventLog, Money};

pub use backend::{
    Backend, BackendError, EndpointConfig, HttpBackend, ScriptedBackend, Usage, SCRIPT_HARD, SCRIPT_SEPARATOR,
    SCRIPT_TRANSIENT,
};
pub use structured::{extract_first_object, FieldType, Schema, StructuredPayload};
pub use templates::Templates;

pub const DEFAULT_MAX_RETRIES: u32 = 4;
pub const DEFAULT_BASE_DELAY: Duration = Duration::from_secs(2);
pub const DEFAULT_CONTEXT_CAP: usize = 256 * 1024;
pub const MAX_REPAIRS: usize = 2;
/// Per-1k-token price charged for scripted replies.
pub const SCRIPTED_UNIT_COST: &str = "0.01";

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("template variable {0:?} is not bound")]
    UnboundVariable(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("prompt is {size} bytes, context cap is {cap}")]
    PromptTooLarge { size: usize, cap: usize },
    #[error("all endpoints failed after {attempts} attempts: {last}")]
    AllEndpointsFailed { attempts: u32, last: String },
    #[error("LLM spend limit reached")]
    SpendLimitExceeded,
    #[error("reply violates schema after {attempts} attempts: {violation}")]
    SchemaViolation { violation: String, attempts: usize },
    #[error("endpoint pool is empty")]
    EmptyPool,
    #[error("bad LLM spec {0:?}")]
    BadSpec(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
}

fn default_max_output() -> u32 {
    2048
}

impl LlmRequest {
    pub fn new(template_id: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            variables: BTreeMap::new(),
            temperature: 0.0,
            max_output_tokens: default_max_output(),
        }
    }

    pub fn var(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.variables.insert(name.into(), value.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub cost: Money,
    pub endpoint: usize,
}

/// Endpoints in configuration order; the cursor rotates over healthy ones.
#[derive(Clone, Debug)]
pub struct EndpointPool {
    endpoints: Vec<EndpointConfig>,
    healthy: Vec<bool>,
    cursor: usize,
}

impl EndpointPool {
    pub fn new(endpoints: Vec<EndpointConfig>) -> Result<Self, LlmError> {
        if endpoints.is_empty() {
            return Err(LlmError::EmptyPool);
        }
        Ok(Self {
            healthy: vec![true; endpoints.len()],
            endpoints,
            cursor: 0,
        })
    }

    /// Reads a JSON array of [`EndpointConfig`].
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::BadSpec(format!("{}: {e}", path.display())))?;
        let endpoints: Vec<EndpointConfig> =
            serde_json::from_str(&text).map_err(|e| LlmError::BadSpec(format!("{}: {e}", path.display())))?;
        Self::new(endpoints)
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn endpoint(&self, i: usize) -> &EndpointConfig {
        &self.endpoints[i]
    }

    pub fn is_healthy(&self, i: usize) -> bool {
        self.healthy[i]
    }

    /// Next healthy endpoint in round-robin order.
    pub fn next_healthy(&mut self) -> Option<usize> {
        let n = self.endpoints.len();
        (0..n).map(|k| (self.cursor + k) % n).find(|&i| self.healthy[i]).inspect(|&i| {
            self.cursor = (i + 1) % n;
        })
    }

    pub fn mark_unhealthy(&mut self, i: usize) {
        self.healthy[i] = false;
    }
}

pub trait Sleeper: Send {
    fn sleep(&mut self, d: Duration);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&mut self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays without sleeping.
#[derive(Clone, Debug, Default)]
pub struct RecordingSleeper {
    pub delays: Arc<Mutex<Vec<Duration>>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&mut self, d: Duration) {
        self.delays.lock().expect("delay log").push(d);
    }
}

/// Linear backoff: the k-th retry waits `k * base_delay`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            base_delay: DEFAULT_BASE_DELAY,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * retry
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    pool: EndpointPool,
    templates: Templates,
    retry: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
    context_cap: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("pool", &self.pool)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, pool: EndpointPool) -> Self {
        Self {
            backend,
            pool,
            templates: Templates::builtin(),
            retry: RetryPolicy::default(),
            sleeper: Box::new(ThreadSleeper),
            context_cap: DEFAULT_CONTEXT_CAP,
        }
    }

    /// Single-endpoint gateway replaying `backend`.
    pub fn scripted(backend: ScriptedBackend) -> Self {
        let pool = EndpointPool::new(vec![EndpointConfig {
            base_url: "scripted".into(),
            credential_env_var: None,
            unit_cost: SCRIPTED_UNIT_COST.parse().expect("constant price"),
            model: None,
        }])
        .expect("one endpoint");
        Self::new(Box::new(backend), pool)
    }

    /// `scripted:<file>` or `http:<endpoints.json>`.
    pub fn from_spec(spec: &str) -> Result<Self, LlmError> {
        match spec.split_once(':') {
            Some(("scripted", path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| LlmError::BadSpec(format!("{path}: {e}")))?;
                Ok(Self::scripted(ScriptedBackend::parse(&text)))
            }
            Some(("http", path)) => Ok(Self::new(
                Box::new(HttpBackend::default()),
                EndpointPool::from_file(Path::new(path))?,
            )),
            _ => Err(LlmError::BadSpec(spec.to_string())),
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Box<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_context_cap(mut self, cap: usize) -> Self {
        self.context_cap = cap;
        self
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn pool(&self) -> &EndpointPool {
        &self.pool
    }

    pub fn complete(
        &mut self,
        req: &LlmRequest,
        budget: &mut BudgetClock,
        events: &mut EventLog,
    ) -> Result<Completion, LlmError> {
        if budget.spend_exhausted() {
            return Err(LlmError::SpendLimitExceeded);
        }
        let prompt = self.templates.render(&req.template_id, &req.variables)?;
        if prompt.len() > self.context_cap {
            return Err(LlmError::PromptTooLarge {
                size: prompt.len(),
                cap: self.context_cap,
            });
        }
        let mut attempts = 0;
        let mut retries = 0;
        let mut last = String::new();
        loop {
            let Some(idx) = self.pool.next_healthy() else {
                return Err(LlmError::AllEndpointsFailed { attempts, last });
            };
            attempts += 1;
            match self.backend.call(self.pool.endpoint(idx), &prompt, req) {
                Ok((text, usage)) => {
                    let cost = self.charge(idx, usage.total(), &req.template_id, budget, events);
                    return Ok(Completion {
                        text,
                        usage,
                        cost,
                        endpoint: idx,
                    });
                }
                Err(BackendError::Transient {
                    message,
                    tokens_consumed,
                }) => {
                    if tokens_consumed > 0 {
                        self.charge(idx, tokens_consumed, &req.template_id, budget, events);
                    }
                    if retries == self.retry.max_retries {
                        return Err(LlmError::AllEndpointsFailed { attempts, last: message });
                    }
                    retries += 1;
                    let delay = self.retry.delay(retries);
                    events.emit(
                        budget.now(),
                        budget.iteration(),
                        kind::LLM_RETRY,
                        json!({"retry": retries, "endpoint": idx, "delay_ms": delay.as_millis() as u64, "reason": message}),
                    );
                    self.sleeper.sleep(delay);
                    last = message;
                }
                Err(BackendError::Hard(message)) => {
                    self.pool.mark_unhealthy(idx);
                    last = message;
                }
                Err(e @ BackendError::ScriptExhausted) => {
                    return Err(LlmError::AllEndpointsFailed {
                        attempts,
                        last: e.to_string(),
                    })
                }
            }
        }
    }

    fn charge(&self, idx: usize, tokens: u64, memo: &str, budget: &mut BudgetClock, events: &mut EventLog) -> Money {
        let amount = Money::per_thousand_tokens(self.pool.endpoint(idx).unit_cost, tokens);
        // exceeding the limit records the charge and flags finalization
        let _ = budget.charge(amount, format!("llm:{memo}"));
        events.emit(
            budget.now(),
            budget.iteration(),
            kind::CHARGE,
            json!({"amount": amount, "tokens": tokens, "memo": format!("llm:{memo}"), "total": budget.total_spend()}),
        );
        amount
    }

    /// Completes `req` and extracts a JSON object satisfying `schema`,
    /// asking for at most [`MAX_REPAIRS`] corrections.
    pub fn complete_structured(
        &mut self,
        req: &LlmRequest,
        schema: &Schema,
        budget: &mut BudgetClock,
        events: &mut EventLog,
    ) -> Result<StructuredPayload, LlmError> {
        let mut completion = self.complete(req, budget, events)?;
        let mut cost = completion.cost;
        for repairs in 0..=MAX_REPAIRS {
            match schema.check_text(&completion.text) {
                Ok(fields) => {
                    return Ok(StructuredPayload {
                        fields,
                        repairs,
                        cost,
                        raw: completion.text,
                    })
                }
                Err(violation) if repairs == MAX_REPAIRS => {
                    return Err(LlmError::SchemaViolation {
                        violation,
                        attempts: repairs + 1,
                    })
                }
                Err(violation) => {
                    let repair = LlmRequest {
                        template_id: templates::REPAIR.into(),
                        variables: BTreeMap::from([
                            ("violation".to_string(), violation),
                            ("previous_response".to_string(), completion.text.clone()),
                            ("schema".to_string(), schema.describe()),
                        ]),
                        ..req.clone()
                    };
                    completion = self.complete(&repair, budget, events)?;
                    cost += completion.cost;
                }
            }
        }
        unreachable!("loop returns on its last pass")
    }
}
