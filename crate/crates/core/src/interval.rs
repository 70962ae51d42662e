//! Closed time intervals in milliseconds.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid interval [{start_ms}, {end_ms}]: start must precede end")]
pub struct InvalidInterval {
    pub start_ms: f64,
    pub end_ms: f64,
}

/// A closed interval `[start_ms, end_ms]` with `start_ms < end_ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    start_ms: f64,
    end_ms: f64,
}

impl Interval {
    pub fn new(start_ms: f64, end_ms: f64) -> Result<Self, InvalidInterval> {
        // NaN fails this comparison too.
        if start_ms < end_ms && start_ms.is_finite() && end_ms.is_finite() {
            Ok(Self { start_ms, end_ms })
        } else {
            Err(InvalidInterval { start_ms, end_ms })
        }
    }

    pub fn start_ms(&self) -> f64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> f64 {
        self.end_ms
    }

    pub fn length_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    pub fn duration_s(&self) -> f64 {
        self.length_ms() / 1000.0
    }

    pub fn contains(&self, t_ms: f64) -> bool {
        self.start_ms <= t_ms && t_ms <= self.end_ms
    }

    /// Length of the overlap with `other`, zero when disjoint.
    pub fn intersection_ms(&self, other: &Interval) -> f64 {
        (self.end_ms.min(other.end_ms) - self.start_ms.max(other.start_ms)).max(0.0)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start_ms, self.end_ms)
    }
}
