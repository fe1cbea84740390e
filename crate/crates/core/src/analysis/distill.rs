use serde::{Deserialize, Serialize};

use super::decide::Decision;

pub const DEFAULT_SUMMARY_CAP: usize = 2048;
/// Smallest accepted cap; always enough for the header.
pub const MIN_SUMMARY_CAP: usize = 128;

/// Everything known about a finished iteration, in free text.
#[derive(Clone, Debug, Default)]
pub struct IterationRecord {
    pub iteration: i64,
    pub decision: Option<Decision>,
    pub primary_score: Option<f64>,
    pub data_strategy: String,
    pub training_config: String,
    pub rationale: String,
    pub diagnosis: String,
    pub raw_log: String,
}

/// Bounded digest of one iteration, as fed back into later proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: i64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_score: Option<f64>,
    pub data_gist: String,
    pub train_gist: String,
    pub rationale_gist: String,
    pub diagnosis_gist: String,
    pub byte_length: usize,
}

impl IterationSummary {
    fn header(iteration: i64, decision: Decision, score: Option<f64>) -> String {
        let score = score.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        format!("#{iteration} {} score={score}", decision.as_str())
    }

    /// Single-line rendering; its length is `byte_length`.
    pub fn render(&self) -> String {
        format!(
            "{} | data: {} | train: {} | why: {} | diag: {}",
            Self::header(self.iteration, self.decision, self.primary_score),
            self.data_gist,
            self.train_gist,
            self.rationale_gist,
            self.diagnosis_gist
        )
    }
}

/// Whitespace-collapsed single line.
pub fn gist(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Gist of a prefix of `text`, at most `cap` bytes. Only the first
/// `4 * cap` bytes of the input are looked at.
fn bounded_gist(text: &str, cap: usize) -> String {
    let mut end = text.len().min(4 * cap);
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    let mut g = gist(&text[..end]);
    truncate_to(&mut g, cap);
    g
}

fn truncate_to(s: &mut String, max_bytes: usize) {
    if s.len() <= max_bytes {
        return;
    }
    const MARK: &str = "...";
    if max_bytes < MARK.len() {
        s.clear();
        return;
    }
    let mut cut = max_bytes - MARK.len();
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    s.truncate(cut);
    s.push_str(MARK);
}

/// Condenses `record` into at most `cap` bytes (clamped to
/// [`MIN_SUMMARY_CAP`]). Narrative fields are trimmed last-first; the
/// iteration, decision and score are always kept.
pub fn distill(record: &IterationRecord, cap: usize) -> IterationSummary {
    let cap = cap.max(MIN_SUMMARY_CAP);
    let decision = record.decision.unwrap_or(Decision::Crashed);
    let mut s = IterationSummary {
        iteration: record.iteration,
        decision,
        primary_score: record.primary_score.filter(|v| v.is_finite()),
        data_gist: bounded_gist(&record.data_strategy, cap),
        train_gist: bounded_gist(&record.training_config, cap),
        rationale_gist: bounded_gist(&record.rationale, cap),
        diagnosis_gist: bounded_gist(&record.diagnosis, cap),
        byte_length: 0,
    };
    let mut len = s.render().len();
    if len > cap {
        let fields: [fn(&mut IterationSummary) -> &mut String; 4] = [
            |s| &mut s.diagnosis_gist,
            |s| &mut s.rationale_gist,
            |s| &mut s.train_gist,
            |s| &mut s.data_gist,
        ];
        for field in fields {
            let excess = len - cap;
            let f = field(&mut s);
            let keep = f.len().saturating_sub(excess);
            truncate_to(f, keep);
            len = s.render().len();
            if len <= cap {
                break;
            }
        }
    }
    s.byte_length = len;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn huge_log_is_bounded() {
        let big = "loss=1.0 step ok\n".repeat(5 * 1024 * 1024 / 17);
        let rec = IterationRecord {
            iteration: 4,
            decision: Some(Decision::Rejected),
            primary_score: Some(0.5),
            data_strategy: big.clone(),
            training_config: big.clone(),
            rationale: big.clone(),
            diagnosis: big.clone(),
            raw_log: big,
        };
        let s = distill(&rec, DEFAULT_SUMMARY_CAP);
        assert!(s.byte_length <= DEFAULT_SUMMARY_CAP);
        assert_eq!(s.byte_length, s.render().len());
        assert!(s.render().starts_with("#4 rejected score=0.500000"));
        assert!(s.diagnosis_gist.is_empty() || s.diagnosis_gist.len() < s.data_gist.len());
    }

    #[test]
    fn crashed_without_score() {
        let rec = IterationRecord {
            iteration: 2,
            decision: Some(Decision::Crashed),
            ..Default::default()
        };
        let s = distill(&rec, DEFAULT_SUMMARY_CAP);
        assert_eq!(s.decision, Decision::Crashed);
        assert_eq!(s.primary_score, None);
        assert!(s.render().contains("crashed score=-"));
    }

    #[test]
    fn minimal_record_keeps_gists() {
        let rec = IterationRecord {
            iteration: 0,
            decision: Some(Decision::Accepted),
            primary_score: Some(0.34),
            data_strategy: "wide source,\n 200 samples".into(),
            training_config: "lora lr=2e-4".into(),
            rationale: "cover more skills".into(),
            diagnosis: "healthy".into(),
            raw_log: String::new(),
        };
        let s = distill(&rec, DEFAULT_SUMMARY_CAP);
        assert_eq!(s.data_gist, "wide source, 200 samples");
        assert_eq!(s.train_gist, "lora lr=2e-4");
        assert_eq!(s.diagnosis_gist, "healthy");
        assert!(s.byte_length < 200);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bounded_for_any_size(
            chunk in "[a-zA-Z0-9 \n\u{e9}\u{4e2d}]{1,64}",
            reps in 0usize..(10 * 1024 * 1024 / 64),
            cap in 0usize..4096,
            which in 0usize..4,
        ) {
            let big = chunk.repeat(reps);
            let mut rec = IterationRecord {
                iteration: 9,
                decision: Some(Decision::FailedValidation),
                primary_score: None,
                ..Default::default()
            };
            match which {
                0 => rec.data_strategy = big,
                1 => rec.training_config = big,
                2 => rec.rationale = big,
                _ => rec.diagnosis = big,
            }
            let s = distill(&rec, cap);
            prop_assert!(s.byte_length <= cap.max(MIN_SUMMARY_CAP));
            prop_assert!(s.render().contains("failed_validation"));
        }
    }
}
