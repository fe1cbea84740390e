//! Time sources for run-relative timestamps.
//!
//! Every timestamp recorded by a run (event stream, ledger, deadline checks)
//! is a number of milliseconds since the run started, read from a [`Clock`].
//! Production runs use [`SystemClock`]; reproducible runs use
//! [`LogicalClock`], whose readings depend only on how many times it was read.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync + fmt::Debug {
    /// Milliseconds since an arbitrary fixed origin. Monotone.
    fn now_ms(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Deterministic clock. Each reading advances time by `tick_ms`; tests can
/// also move it forward explicitly with [`LogicalClock::advance`].
#[derive(Debug)]
pub struct LogicalClock {
    now: AtomicU64,
    tick_ms: u64,
}

impl LogicalClock {
    pub fn new(tick_ms: u64) -> Self {
        Self {
            now: AtomicU64::new(0),
            tick_ms,
        }
    }

    /// A clock that only moves when told to.
    pub fn manual() -> Self {
        Self::new(0)
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.now.fetch_add(self.tick_ms, Ordering::SeqCst) + self.tick_ms
    }
}
