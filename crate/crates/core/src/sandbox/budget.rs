//! Wall-clock budget and LLM spend ledger.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::clock::Clock;

const NANOS_PER_UNIT: i64 = 1_000_000_000;

/// Currency amount held as integer nano-units so ledger sums are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid currency amount {0:?}")]
pub struct MoneyParseError(pub String);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_nanos(nanos: i64) -> Self {
        Money(nanos)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    /// Rounds to the nearest nano-unit.
    pub fn from_f64(value: f64) -> Self {
        Money((value * NANOS_PER_UNIT as f64).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_UNIT as f64
    }

    /// Cost of `tokens` at `per_thousand` currency units per 1k tokens.
    pub fn per_thousand_tokens(per_thousand: Money, tokens: u64) -> Money {
        let nanos = (per_thousand.0 as i128 * tokens as i128 + 500) / 1000;
        Money(nanos as i64)
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl FromStr for Money {
    type Err = MoneyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MoneyParseError(s.to_string());
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 9
        {
            return Err(err());
        }
        let whole: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| err())?
        };
        let mut frac: i64 = 0;
        for (i, c) in frac_part.chars().enumerate() {
            frac += (c as i64 - '0' as i64) * 10_i64.pow(8 - i as u32);
        }
        let nanos = whole
            .checked_mul(NANOS_PER_UNIT)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(err)?;
        Ok(Money(if neg { -nanos } else { nanos }))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / NANOS_PER_UNIT as u64;
        let frac = format!("{:09}", abs % NANOS_PER_UNIT as u64);
        let mut frac = frac.trim_end_matches('0').to_string();
        while frac.len() < 2 {
            frac.push('0');
        }
        write!(f, "{sign}{whole}.{frac}")
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Number(v) => Ok(Money::from_f64(v)),
        }
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: i64,
    pub amount: Money,
    pub memo: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("negative charge {0}")]
    NegativeCharge(Money),
    #[error("spend limit exceeded: {total} > {limit}")]
    SpendLimitExceeded { total: Money, limit: Money },
}

/// Wall-clock deadline plus an append-only spend ledger for one run.
#[derive(Debug)]
pub struct BudgetClock {
    clock: Arc<dyn Clock>,
    started_at_ms: u64,
    wall_clock_limit_ms: u64,
    spend_limit: Option<Money>,
    ledger: Vec<LedgerEntry>,
    total: Money,
    iteration: i64,
    finalize_requested: bool,
}

impl BudgetClock {
    pub fn new(clock: Arc<dyn Clock>, wall_clock_limit: Duration, spend_limit: Option<Money>) -> Self {
        let started_at_ms = clock.now_ms();
        Self {
            clock,
            started_at_ms,
            wall_clock_limit_ms: wall_clock_limit.as_millis() as u64,
            spend_limit,
            ledger: Vec::new(),
            total: Money::ZERO,
            iteration: -1,
            finalize_requested: false,
        }
    }

    /// Milliseconds since the run started. Reads the underlying clock.
    pub fn now(&self) -> u64 {
        self.clock.now_ms().saturating_sub(self.started_at_ms)
    }

    pub fn started_at_ms(&self) -> u64 {
        self.started_at_ms
    }

    pub fn wall_clock_limit_ms(&self) -> u64 {
        self.wall_clock_limit_ms
    }

    /// Remaining wall-clock time as of `now` (run-relative ms), never negative.
    pub fn remaining_at(&self, now: u64) -> u64 {
        self.wall_clock_limit_ms.saturating_sub(now)
    }

    pub fn remaining(&self) -> u64 {
        self.remaining_at(self.now())
    }

    pub fn deadline_passed_at(&self, now: u64) -> bool {
        now >= self.wall_clock_limit_ms
    }

    pub fn deadline_passed(&self) -> bool {
        self.deadline_passed_at(self.now())
    }

    /// Iteration index attributed to subsequent ledger entries.
    pub fn set_iteration(&mut self, iteration: i64) {
        self.iteration = iteration;
    }

    pub fn iteration(&self) -> i64 {
        self.iteration
    }

    /// Appends a ledger entry. Exceeding the spend limit still records the
    /// charge; the run is then flagged for finalization.
    pub fn charge(&mut self, amount: Money, memo: impl Into<String>) -> Result<Money, BudgetError> {
        if amount.is_negative() {
            return Err(BudgetError::NegativeCharge(amount));
        }
        self.ledger.push(LedgerEntry {
            iteration: self.iteration,
            amount,
            memo: memo.into(),
        });
        self.total += amount;
        match self.spend_limit {
            Some(limit) if self.total > limit => {
                self.finalize_requested = true;
                Err(BudgetError::SpendLimitExceeded {
                    total: self.total,
                    limit,
                })
            }
            _ => Ok(self.total),
        }
    }

    /// True when no further spend is allowed.
    pub fn spend_exhausted(&self) -> bool {
        matches!(self.spend_limit, Some(limit) if self.total >= limit)
    }

    pub fn total_spend(&self) -> Money {
        self.total
    }

    pub fn spend_limit(&self) -> Option<Money> {
        self.spend_limit
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn finalize_requested(&self) -> bool {
        self.finalize_requested
    }

    pub fn cost_of_iteration(&self, iteration: i64) -> Money {
        self.ledger
            .iter()
            .filter(|e| e.iteration == iteration)
            .map(|e| e.amount)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::clock::LogicalClock;

    fn budget(limit_ms: u64, spend: Option<&str>) -> (Arc<LogicalClock>, BudgetClock) {
        let clock = Arc::new(LogicalClock::manual());
        let b = BudgetClock::new(
            clock.clone(),
            Duration::from_millis(limit_ms),
            spend.map(|s| s.parse().unwrap()),
        );
        (clock, b)
    }

    #[test]
    fn ledger_sum_is_exact() {
        let (_, mut b) = budget(1000, None);
        b.charge("1.20".parse().unwrap(), "propose").unwrap();
        b.charge("4.53".parse().unwrap(), "synthesis").unwrap();
        assert_eq!(b.total_spend(), "5.73".parse().unwrap());
        assert_eq!(b.total_spend().to_string(), "5.73");
        let sum: Money = b.ledger().iter().map(|e| e.amount).sum();
        assert_eq!(sum, b.total_spend());
    }

    #[test]
    fn zero_charge_is_a_noop_entry() {
        let (_, mut b) = budget(1000, None);
        b.charge(Money::ZERO, "nothing").unwrap();
        assert_eq!(b.ledger().len(), 1);
        assert_eq!(b.total_spend(), Money::ZERO);
    }

    #[test]
    fn charge_past_limit_is_recorded_and_flags_finalization() {
        let (_, mut b) = budget(1000, Some("1.00"));
        b.charge("0.60".parse().unwrap(), "a").unwrap();
        let err = b.charge("0.50".parse().unwrap(), "b").unwrap_err();
        assert!(matches!(err, BudgetError::SpendLimitExceeded { .. }));
        assert_eq!(b.total_spend(), "1.10".parse().unwrap());
        assert!(b.finalize_requested());
        assert!(b.spend_exhausted());
    }

    #[test]
    fn negative_charge_rejected() {
        let (_, mut b) = budget(1000, None);
        assert!(b.charge(Money::from_nanos(-1), "x").is_err());
        assert!(b.ledger().is_empty());
    }

    #[test]
    fn remaining_never_negative() {
        let (clock, b) = budget(100, None);
        assert_eq!(b.remaining(), 100);
        clock.advance(250);
        assert_eq!(b.remaining(), 0);
        assert!(b.deadline_passed());
    }

    #[test]
    fn token_pricing() {
        let unit: Money = "0.002".parse().unwrap();
        assert_eq!(Money::per_thousand_tokens(unit, 1000), "0.002".parse().unwrap());
        assert_eq!(Money::per_thousand_tokens(unit, 0), Money::ZERO);
    }

    #[test]
    fn money_parse_and_display() {
        assert_eq!("5.73".parse::<Money>().unwrap().nanos(), 5_730_000_000);
        assert_eq!("-0.5".parse::<Money>().unwrap().to_string(), "-0.50");
        assert_eq!("3".parse::<Money>().unwrap().to_string(), "3.00");
        assert_eq!("0.000000001".parse::<Money>().unwrap().nanos(), 1);
        assert!("1.0000000001".parse::<Money>().is_err());
        assert!("abc".parse::<Money>().is_err());
        let json = serde_json::to_string(&"0.002".parse::<Money>().unwrap()).unwrap();
        assert_eq!(json, "\"0.002\"");
        let back: Money = serde_json::from_str("0.25").unwrap();
        assert_eq!(back.to_string(), "0.25");
    }
}
