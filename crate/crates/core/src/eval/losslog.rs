//! Loss trajectory file: one line per point,
//! `step <int> train_loss <float> [eval_loss <float>]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    #[serde(with = "lossy_f64")]
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "lossy_opt_f64")]
    pub eval_loss: Option<f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("loss log line {line}: {message}")]
pub struct LossLogError {
    pub line: usize,
    pub message: String,
}

fn parse_float(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "nan" => Some(f64::NAN),
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossPoint>, LossLogError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| LossLogError {
            line: i + 1,
            message: message.to_string(),
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 && toks.len() != 6 {
            return Err(err("expected 4 or 6 tokens"));
        }
        if toks[0] != "step" || toks[2] != "train_loss" {
            return Err(err("expected `step <int> train_loss <float>`"));
        }
        let step = toks[1].parse().map_err(|_| err("step is not an integer"))?;
        let train_loss = parse_float(toks[3]).ok_or_else(|| err("train_loss is not a number"))?;
        let eval_loss = if toks.len() == 6 {
            if toks[4] != "eval_loss" {
                return Err(err("expected `eval_loss <float>`"));
            }
            Some(parse_float(toks[5]).ok_or_else(|| err("eval_loss is not a number"))?)
        } else {
            None
        };
        points.push(LossPoint {
            step,
            train_loss,
            eval_loss,
        });
    }
    Ok(points)
}

pub fn format_loss_log(points: &[LossPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&format!("step {} train_loss {}", p.step, p.train_loss));
        if let Some(e) = p.eval_loss {
            out.push_str(&format!(" eval_loss {e}"));
        }
        out.push('\n');
    }
    out
}

/// JSON cannot carry NaN/inf, so non-finite values serialize as strings.
mod lossy_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => super::parse_float(&t).ok_or_else(|| serde::de::Error::custom("not a float")),
        }
    }
}

mod lossy_opt_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::lossy_f64::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::lossy_f64")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
