use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;

use super::LlmError;

pub const HYPOTHESIS: &str = "hypothesis";
pub const DATA_PROCESSING: &str = "data-processing";
pub const TRAINING_CONFIG: &str = "training-config";
pub const FEEDBACK: &str = "feedback";
pub const REPAIR: &str = "repair";
pub const COT_SYNTHESIS: &str = "cot-synthesis";

const BUILTIN: [(&str, &str); 6] = [
    (HYPOTHESIS, include_str!("../../templates/hypothesis.txt")),
    (DATA_PROCESSING, include_str!("../../templates/data-processing.txt")),
    (TRAINING_CONFIG, include_str!("../../templates/training-config.txt")),
    (FEEDBACK, include_str!("../../templates/feedback.txt")),
    (REPAIR, include_str!("../../templates/repair.txt")),
    (COT_SYNTHESIS, include_str!("../../templates/cot-synthesis.txt")),
];

/// Prompt templates with `{{name}}` placeholders, keyed by template id.
#[derive(Clone, Debug)]
pub struct Templates {
    by_id: BTreeMap<String, String>,
    placeholder: Regex,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            by_id: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            placeholder: Regex::new(r"\{\{\s*([A-Za-z0-9_.-]+)\s*\}\}").expect("static regex"),
        }
    }

    /// Replaces or adds templates from every `<id>.txt` file in `dir`.
    pub fn with_overrides(mut self, dir: &Path) -> std::io::Result<Self> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    self.by_id.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(self)
    }

    pub fn insert(&mut self, id: impl Into<String>, body: impl Into<String>) {
        self.by_id.insert(id.into(), body.into());
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.by_id.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.by_id.get(id).map(String::as_str)
    }

    /// Substitutes every placeholder in one pass. Substituted values are
    /// not scanned again. Unused variables are ignored.
    pub fn render(&self, id: &str, vars: &BTreeMap<String, String>) -> Result<String, LlmError> {
        let body = self.get(id).ok_or_else(|| LlmError::UnknownTemplate(id.to_string()))?;
        if let Some(missing) = self
            .placeholder
            .captures_iter(body)
            .map(|c| c[1].to_string())
            .find(|name| !vars.contains_key(name))
        {
            return Err(LlmError::UnboundVariable(missing));
        }
        Ok(self
            .placeholder
            .replace_all(body, |c: &regex::Captures| vars[&c[1]].clone())
            .into_owned())
    }

    /// Placeholder names used by a template, in order of first use.
    pub fn variables(&self, id: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.get(id).map(|b| self.placeholder.captures_iter(b)).into_iter().flatten() {
            if !out.iter().any(|v| v == &c[1]) {
                out.push(c[1].to_string());
            }
        }
        out
    }
}
