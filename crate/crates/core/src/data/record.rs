use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::DataError;

/// Unified instruction-response record. Serialized with exactly the fields
/// `instruction, input, output` plus an optional `meta` map.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    #[serde(default)]
    pub output: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl DataRecord {
    pub fn new(instruction: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            input: input.into(),
            output: output.into(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Case- and whitespace-insensitive identity of the prompt side.
    pub fn normalization_key(&self) -> String {
        normalization_key(&self.instruction, &self.input)
    }

    /// Looks up `instruction`, `input`, `output` or `meta.<key>`.
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "instruction" => Some(&self.instruction),
            "input" => Some(&self.input),
            "output" => Some(&self.output),
            other => other
                .strip_prefix("meta.")
                .and_then(|k| self.meta.get(k))
                .map(String::as_str),
        }
    }

    pub fn set_field(&mut self, name: &str, value: String) -> bool {
        match name {
            "instruction" => self.instruction = value,
            "input" => self.input = value,
            "output" => self.output = value,
            other => match other.strip_prefix("meta.") {
                Some(k) => {
                    self.meta.insert(k.to_string(), value);
                }
                None => return false,
            },
        }
        true
    }
}

pub fn normalization_key(instruction: &str, input: &str) -> String {
    let mut key = String::with_capacity(instruction.len() + input.len() + 1);
    for word in instruction.split_whitespace().chain(input.split_whitespace()) {
        if !key.is_empty() {
            key.push(' ');
        }
        key.extend(word.chars().flat_map(char::to_lowercase));
    }
    key
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatHint {
    /// JSON lines with `instruction`, `input`, `output`.
    Alpaca,
    /// JSON lines with `q`/`question`, `a`/`answer`, optional `context`.
    Qa,
    /// CSV with a header row; columns named like the alpaca or qa keys.
    Csv,
}

impl FromStr for FormatHint {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alpaca" | "jsonl" => Ok(FormatHint::Alpaca),
            "qa" => Ok(FormatHint::Qa),
            "csv" => Ok(FormatHint::Csv),
            _ => Err(DataError::UnparsableFormat(format!("unknown format hint {s:?}"))),
        }
    }
}

impl fmt::Display for FormatHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatHint::Alpaca => "alpaca",
            FormatHint::Qa => "qa",
            FormatHint::Csv => "csv",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnparsableRecord(pub String);

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn take_first(obj: &mut Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.remove(*k))
        .map(|v| text_of(&v))
}

/// Maps one raw object onto a [`DataRecord`]. Unknown scalar fields become
/// `meta` annotations.
pub fn normalize(raw: &Value, hint: FormatHint) -> Result<DataRecord, UnparsableRecord> {
    let mut obj = match raw {
        Value::Object(m) => m.clone(),
        _ => return Err(UnparsableRecord("record is not an object".into())),
    };
    let (instruction, input, output) = match hint {
        FormatHint::Alpaca => (
            take_first(&mut obj, &["instruction"]),
            take_first(&mut obj, &["input"]),
            take_first(&mut obj, &["output"]),
        ),
        FormatHint::Qa => (
            take_first(&mut obj, &["q", "question"]),
            take_first(&mut obj, &["context", "input"]),
            take_first(&mut obj, &["a", "answer"]),
        ),
        FormatHint::Csv => (
            take_first(&mut obj, &["instruction", "question", "q"]),
            take_first(&mut obj, &["input", "context"]),
            take_first(&mut obj, &["output", "answer", "a"]),
        ),
    };
    let instruction = instruction.unwrap_or_default();
    let output = output.unwrap_or_default();
    if instruction.trim().is_empty() {
        return Err(UnparsableRecord("empty instruction".into()));
    }
    if output.trim().is_empty() {
        return Err(UnparsableRecord("empty answer".into()));
    }
    let mut meta = BTreeMap::new();
    if let Some(Value::Object(m)) = obj.remove("meta") {
        for (k, v) in m {
            meta.insert(k, text_of(&v));
        }
    }
    for (k, v) in obj {
        if !matches!(v, Value::Object(_) | Value::Array(_)) {
            meta.insert(k, text_of(&v));
        }
    }
    Ok(DataRecord {
        instruction,
        input: input.unwrap_or_default(),
        output,
        meta,
    })
}
