use serde_json::{Map, Value};

use crate::sandbox::Money;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldType {
    String,
    Number,
    Bool,
    Object,
    Array,
    Any,
}

impl FieldType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::String => v.is_string(),
            FieldType::Number => v.is_number(),
            FieldType::Bool => v.is_boolean(),
            FieldType::Object => v.is_object(),
            FieldType::Array => v.is_array(),
            FieldType::Any => true,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FieldType::String => "string",
            FieldType::Number => "number",
            FieldType::Bool => "boolean",
            FieldType::Object => "object",
            FieldType::Array => "array",
            FieldType::Any => "any",
        }
    }
}

/// Required top-level fields of a structured reply. Other fields pass
/// through untouched. A reply whose `escape` field is `true` is accepted
/// without the required fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub required: Vec<(String, FieldType)>,
    pub escape: Option<String>,
}

impl Schema {
    pub fn new(fields: &[(&str, FieldType)]) -> Self {
        Self {
            required: fields.iter().map(|(n, t)| (n.to_string(), *t)).collect(),
            escape: None,
        }
    }

    pub fn with_escape(mut self, field: &str) -> Self {
        self.escape = Some(field.to_string());
        self
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self.required.iter().map(|(n, t)| format!("\"{n}\" ({})", t.name())).collect();
        match &self.escape {
            Some(e) => format!("{}; or \"{e}\": true", parts.join(", ")),
            None => parts.join(", "),
        }
    }

    pub fn check(&self, obj: &Map<String, Value>) -> Result<(), String> {
        if self.escape.as_ref().is_some_and(|e| obj.get(e) == Some(&Value::Bool(true))) {
            return Ok(());
        }
        for (name, ty) in &self.required {
            match obj.get(name) {
                None => return Err(format!("missing field \"{name}\"")),
                Some(v) if !ty.accepts(v) => return Err(format!("field \"{name}\" must be {}", ty.name())),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn check_text(&self, text: &str) -> Result<Map<String, Value>, String> {
        let obj = extract_first_object(text).ok_or_else(|| "no JSON object found".to_string())?;
        self.check(&obj)?;
        Ok(obj)
    }
}

/// First well-formed JSON object embedded anywhere in `text`, such as
/// inside a fenced block or after prose.
pub fn extract_first_object(text: &str) -> Option<Map<String, Value>> {
    text.char_indices().filter(|&(_, c)| c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredPayload {
    /// The whole object, including fields beyond the schema.
    pub fields: Map<String, Value>,
    pub repairs: usize,
    /// Spend across the first reply and every repair.
    pub cost: Money,
    pub raw: String,
}
