//! Pointwise medians of convergence curves across repeats.

use ica_core::trace::ConvergenceTrace;
use serde::{Deserialize, Serialize};

/// Points on the shared time axis.
pub const TIME_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianCurve {
    /// Median `max |G_ij|` at iteration `k`.
    pub by_iteration: Vec<f64>,
    /// Log-spaced times shared by every run.
    pub time_grid: Vec<f64>,
    pub by_time: Vec<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl MedianCurve {
    pub fn from_traces(traces: &[&ConvergenceTrace]) -> Self {
        let traces: Vec<_> = traces.iter().copied().filter(|t| !t.is_empty()).collect();
        if traces.is_empty() {
            return Self { by_iteration: vec![], time_grid: vec![], by_time: vec![] };
        }
        let by_iteration = iteration_median(&traces);
        let time_grid = log_grid(&traces);
        let by_time = time_grid
            .iter()
            .map(|&tau| {
                let mut v: Vec<f64> = traces.iter().map(|t| value_at_time(t, tau)).collect();
                median(&mut v)
            })
            .collect();
        Self { by_iteration, time_grid, by_time }
    }
}

/// Runs that stopped keep their last value; the curve ends once fewer than
/// half of the runs are still active.
fn iteration_median(traces: &[&ConvergenceTrace]) -> Vec<f64> {
    let quorum = traces.len().div_ceil(2);
    let mut out = Vec::new();
    for k in 0.. {
        let active = traces.iter().filter(|t| t.len() > k).count();
        if active < quorum {
            break;
        }
        let mut v: Vec<f64> = traces
            .iter()
            .map(|t| t.records[k.min(t.len() - 1)].grad_inf)
            .collect();
        out.push(median(&mut v));
    }
    out
}

fn log_grid(traces: &[&ConvergenceTrace]) -> Vec<f64> {
    let times = traces.iter().flat_map(|t| t.records.iter().map(|r| r.time_s));
    let first = times.clone().filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
    let last = times.fold(0.0, f64::max);
    if !first.is_finite() || last <= first {
        return vec![last.max(0.0)];
    }
    let (a, b) = (first.ln(), last.ln());
    (0..TIME_GRID_POINTS)
        .map(|k| (a + (b - a) * k as f64 / (TIME_GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// Last observation at or before `tau`; the first observation before the run
/// records anything.
fn value_at_time(trace: &ConvergenceTrace, tau: f64) -> f64 {
    let idx = trace.records.partition_point(|r| r.time_s <= tau);
    trace.records[idx.saturating_sub(1)].grad_inf
}

#[cfg(test)]
mod tests {
    use super::*;
    use ica_core::trace::TraceRecord;

    fn trace(values: &[f64], dt: f64) -> ConvergenceTrace {
        let mut t = ConvergenceTrace::default();
        for (k, &v) in values.iter().enumerate() {
            t.push(TraceRecord::new(k, k as f64 * dt, v, 0.0));
        }
        t
    }

    #[test]
    fn single_run_is_its_own_median() {
        let t = trace(&[1.0, 0.1, 0.01], 0.5);
        let m = MedianCurve::from_traces(&[&t]);
        assert_eq!(m.by_iteration, vec![1.0, 0.1, 0.01]);
        assert_eq!(m.time_grid.len(), TIME_GRID_POINTS);
        assert!((m.time_grid[0] - 0.5).abs() < 1e-12);
        assert!((m.time_grid[TIME_GRID_POINTS - 1] - 1.0).abs() < 1e-12);
        assert_eq!(m.by_time[0], 0.1);
        assert_eq!(*m.by_time.last().unwrap(), 0.01);
    }

    #[test]
    fn curve_ends_with_the_middle_run() {
        // Runs stop at iterations 5, 9 and 30.
        let runs: Vec<_> = [5usize, 9, 30]
            .iter()
            .map(|&n| trace(&(0..=n).map(|k| 0.5f64.powi(k as i32)).collect::<Vec<_>>(), 1.0))
            .collect();
        let refs: Vec<_> = runs.iter().collect();
        let m = MedianCurve::from_traces(&refs);
        assert_eq!(m.by_iteration.len(), 10);
        // Past iteration 5 the first run holds 2^-5 and the median follows it.
        assert_eq!(m.by_iteration[7], 0.5f64.powi(7));
        assert_eq!(m.by_iteration[9], 0.5f64.powi(9));
    }

    #[test]
    fn order_of_runs_does_not_matter() {
        let a = trace(&[3.0, 1.0, 0.5, 0.2], 0.1);
        let b = trace(&[2.0, 0.3], 0.4);
        let c = trace(&[5.0, 4.0, 0.1], 0.2);
        let m1 = MedianCurve::from_traces(&[&a, &b, &c]);
        let m2 = MedianCurve::from_traces(&[&c, &a, &b]);
        assert_eq!(m1, m2);
    }

    #[test]
    fn even_count_averages_the_middle_pair() {
        let mut v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), 2.5);
    }

    #[test]
    fn staircase_holds_last_value() {
        let t = trace(&[1.0, 0.5, 0.25], 1.0);
        assert_eq!(value_at_time(&t, 0.0), 1.0);
        assert_eq!(value_at_time(&t, 0.99), 1.0);
        assert_eq!(value_at_time(&t, 1.0), 0.5);
        assert_eq!(value_at_time(&t, 100.0), 0.25);
    }
}
