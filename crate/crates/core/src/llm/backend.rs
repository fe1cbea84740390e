use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::data::estimate_tokens;
use crate::sandbox::Money;

use super::LlmRequest;

/// One configured chat-completion endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env_var: Option<String>,
    /// Price per 1000 tokens, prompt and completion alike.
    pub unit_cost: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient failure: {message}")]
    Transient { message: String, tokens_consumed: u64 },
    /// The endpoint rejected the request outright.
    #[error("rejected: {0}")]
    Hard(String),
    #[error("scripted responses exhausted")]
    ScriptExhausted,
}

pub trait Backend: Send {
    fn call(&mut self, endpoint: &EndpointConfig, prompt: &str, req: &LlmRequest) -> Result<(String, Usage), BackendError>;
}

/// Marker response bodies understood by [`ScriptedBackend`].
pub const SCRIPT_TRANSIENT: &str = "!transient";
pub const SCRIPT_HARD: &str = "!hard";
pub const SCRIPT_SEPARATOR: &str = "### response";

/// Replays a fixed list of responses in order and records every prompt.
///
/// A response consisting of `!transient` or `!hard` simulates that failure.
#[derive(Clone, Debug, Default)]
pub struct ScriptedBackend {
    responses: Vec<String>,
    cursor: usize,
    prompts: Arc<Mutex<Vec<String>>>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            ..Default::default()
        }
    }

    /// Splits a script file on lines reading `### response`. Text before
    /// the first separator is ignored.
    pub fn parse(text: &str) -> Self {
        let mut responses = Vec::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if line.trim() == SCRIPT_SEPARATOR {
                if let Some(done) = current.take() {
                    responses.push(done.trim().to_string());
                }
                current = Some(String::new());
            } else if let Some(buf) = current.as_mut() {
                buf.push_str(line);
                buf.push('\n');
            }
        }
        if let Some(done) = current {
            responses.push(done.trim().to_string());
        }
        Self::new(responses)
    }

    /// Shared handle to the prompts seen so far.
    pub fn prompts(&self) -> Arc<Mutex<Vec<String>>> {
        self.prompts.clone()
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.cursor
    }
}

impl Backend for ScriptedBackend {
    fn call(&mut self, _endpoint: &EndpointConfig, prompt: &str, _req: &LlmRequest) -> Result<(String, Usage), BackendError> {
        self.prompts.lock().expect("prompt log").push(prompt.to_string());
        let text = self.responses.get(self.cursor).ok_or(BackendError::ScriptExhausted)?.clone();
        self.cursor += 1;
        match text.as_str() {
            SCRIPT_TRANSIENT => Err(BackendError::Transient {
                message: "scripted timeout".into(),
                tokens_consumed: 0,
            }),
            SCRIPT_HARD => Err(BackendError::Hard("scripted rejection".into())),
            _ => {
                let usage = Usage {
                    prompt_tokens: estimate_tokens(prompt) as u64,
                    completion_tokens: estimate_tokens(&text) as u64,
                };
                Ok((text, usage))
            }
        }
    }
}

/// OpenAI-style `POST {base_url}/chat/completions` client.
#[derive(Clone, Debug)]
pub struct HttpBackend {
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

fn parse_chat_response(v: &Value) -> Option<(String, Usage)> {
    let text = v.pointer("/choices/0/message/content")?.as_str()?.to_string();
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Some((text, usage))
}

impl Backend for HttpBackend {
    fn call(&mut self, endpoint: &EndpointConfig, prompt: &str, req: &LlmRequest) -> Result<(String, Usage), BackendError> {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut body = json!({
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(model) = &endpoint.model {
            body["model"] = json!(model);
        }
        let mut call = self.agent.post(&url);
        if let Some(key) = endpoint.credential_env_var.as_ref().and_then(|var| std::env::var(var).ok()) {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(body) {
            Ok(resp) => {
                let v: Value = resp.into_json().map_err(|e| BackendError::Transient {
                    message: format!("unreadable response: {e}"),
                    tokens_consumed: 0,
                })?;
                parse_chat_response(&v).ok_or_else(|| BackendError::Hard("response has no message content".into()))
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => Err(BackendError::Transient {
                message: format!("status {code}"),
                tokens_consumed: 0,
            }),
            Err(ureq::Error::Status(code, _)) => Err(BackendError::Hard(format!("status {code}"))),
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transient {
                message: t.to_string(),
                tokens_consumed: 0,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_parsing() {
        let b = ScriptedBackend::parse("preamble\n### response\n{\"a\": 1}\n\n### response\nline one\nline two\n");
        assert_eq!(b.responses, vec!["{\"a\": 1}".to_string(), "line one\nline two".to_string()]);
    }

    #[test]
    fn chat_response_shape() {
        let v = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let (text, usage) = parse_chat_response(&v).unwrap();
        assert_eq!(text, "hi");
        assert_eq!(usage.total(), 4);
        assert!(parse_chat_response(&json!({"choices": []})).is_none());
    }
}
