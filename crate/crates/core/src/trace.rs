//! Per-iteration convergence records and the solver clock.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Wall-clock seconds since solver start, excluding oracle-only work.
    pub time_s: f64,
    /// `max_ij |G_ij|`
    pub grad_inf: f64,
    pub loss: f64,
    /// Loss evaluations spent by the line search of this iteration.
    pub ls_tries: usize,
    /// Whether the iteration fell back to the gradient direction.
    pub fallback: bool,
    /// Number of `Y1 Y2^T`-shaped products with an N x T operand.
    pub n2t_products: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cg: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cg_breakdown: bool,
}

impl TraceRecord {
    pub fn new(iter: usize, time_s: f64, grad_inf: f64, loss: f64) -> Self {
        Self {
            iter,
            time_s,
            grad_inf,
            loss,
            ls_tries: 0,
            fallback: false,
            n2t_products: 0,
            n_cg: None,
            cg_breakdown: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.iter > last.iter);
            debug_assert!(record.time_s >= last.time_s);
        }
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First iteration whose gradient norm is at most `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.grad_inf <= tol).map(|r| r.iter)
    }
}

/// A clock that can be paused around work excluded from reported time.
#[derive(Debug)]
pub struct Stopwatch {
    start: Instant,
    excluded: Duration,
    paused_at: Option<Instant>,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
            excluded: Duration::ZERO,
            paused_at: None,
        }
    }

    pub fn pause(&mut self) {
        if self.paused_at.is_none() {
            self.paused_at = Some(Instant::now());
        }
    }

    pub fn resume(&mut self) {
        if let Some(p) = self.paused_at.take() {
            self.excluded += p.elapsed();
        }
    }

    pub fn elapsed_secs(&self) -> f64 {
        let now = self.paused_at.unwrap_or_else(Instant::now);
        (now.duration_since(self.start) - self.excluded).as_secs_f64()
    }
}
