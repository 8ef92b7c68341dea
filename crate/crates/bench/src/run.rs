//! Repeat orchestration, trace files and summaries.

use std::fs;
use std::path::{Path, PathBuf};

use ica_core::datagen::{gen_experiment, Experiment};
use ica_core::picard::SolveStatus;
use ica_core::prep::{preprocess, DataMatrix};
use ica_core::trace::{ConvergenceTrace, TraceRecord};
use ica_core::IcaError;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::load_matrix;
use crate::median::{median, MedianCurve};
use crate::solvers::{run_solver, SolverId, SolverSettings};
use crate::svg::render_svg;
use crate::BenchError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ICABENCH_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Experiment {
        experiment: Experiment,
        n: Option<usize>,
        t: Option<usize>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub solvers: Vec<SolverId>,
    pub settings: SolverSettings,
    pub data: DataSource,
    /// Repeat `r` uses seed `seed + r`.
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    /// Run repeats one at a time on the calling thread.
    pub sequential: bool,
    pub svg: bool,
}

impl RunSpec {
    pub fn new(solver: SolverId, data: DataSource, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            solvers: vec![solver],
            settings: SolverSettings::default(),
            data,
            seed: 0,
            repeats: 10,
            out_dir: out_dir.into(),
            sequential: false,
            svg: false,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |msg: String| Err(BenchError::InvalidSpec(msg));
        if self.repeats == 0 {
            return invalid("repeats must be at least 1".into());
        }
        if self.solvers.is_empty() {
            return invalid("no solver given".into());
        }
        for (k, id) in self.solvers.iter().enumerate() {
            if self.solvers[..k].contains(id) {
                return invalid(format!("solver {id} listed twice"));
            }
            self.settings.check(*id).map_err(BenchError::InvalidSpec)?;
        }
        self.settings.solver.validate()?;
        if let DataSource::Experiment { experiment, n, t } = &self.data {
            let (dn, dt) = experiment.default_size();
            let (n, t) = (n.unwrap_or(dn), t.unwrap_or(dt));
            if n < 2 || t < n {
                return invalid(format!("experiment size must satisfy N >= 2 and T >= N, got {n} x {t}"));
            }
            self.check_sizes(n, t)?;
        }
        Ok(())
    }

    fn check_sizes(&self, n: usize, t: usize) -> Result<(), BenchError> {
        if self.solvers.contains(&SolverId::Infomax) {
            self.settings.infomax.validate(t)?;
        }
        let cap = self.settings.tnewton.oracle_cap;
        if self.solvers.contains(&SolverId::Tnewton) && n > cap {
            return Err(IcaError::OracleCapExceeded { n, cap }.into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Stalled,
    Diverged,
}

impl From<SolveStatus> for RunStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => RunStatus::Converged,
            SolveStatus::MaxIter => RunStatus::MaxIter,
            SolveStatus::Stalled => RunStatus::Stalled,
        }
    }
}

/// One solver on one repeat.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub solver: SolverId,
    pub repeat: usize,
    pub seed: u64,
    pub n: usize,
    pub t: usize,
    pub status: RunStatus,
    pub error: Option<String>,
    pub trace: ConvergenceTrace,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.status == RunStatus::Diverged
    }
}

/// Contents of a per-run trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub solver: SolverId,
    pub config: serde_json::Value,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_grad_inf: Option<f64>,
    pub reached_tol: bool,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: SolverId,
    pub config: serde_json::Value,
    pub data: DataSource,
    pub n: usize,
    pub t: usize,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub runs: Vec<RunOutcome>,
    /// Fraction of all repeats whose final gradient norm is within `tol`.
    pub reached_tol_fraction: f64,
    pub failed_runs: usize,
    pub median_iterations_to_tol: Option<f64>,
    pub warnings: Vec<String>,
    pub median: MedianCurve,
}

/// Written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub solvers: Vec<SolverSummary>,
}

/// What a finished benchmark hands back.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub summary: BenchSummary,
    pub runs: Vec<RunResult>,
}

impl BenchReport {
    pub fn all_diverged(&self) -> bool {
        self.runs.iter().all(RunResult::failed)
    }
}

pub fn trace_file_name(solver: SolverId, repeat: usize) -> String {
    format!("{solver}_r{repeat:03}.json")
}

/// Whitened data for repeat `repeat`, shared by every solver.
pub fn repeat_data(data: &DataSource, seed: u64, loaded: Option<&DataMatrix>) -> Result<DataMatrix, BenchError> {
    let raw = match (data, loaded) {
        (DataSource::Experiment { experiment, n, t }, _) => {
            DataMatrix::new(gen_experiment(*experiment, seed, *n, *t)?.observed)?
        }
        (DataSource::File { .. }, Some(m)) => m.clone(),
        (DataSource::File { path }, None) => load_matrix(path)?,
    };
    Ok(preprocess(&raw)?.0)
}

fn thread_pool(sequential: bool) -> Result<rayon::ThreadPool, BenchError> {
    let threads = if sequential {
        1
    } else {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0)
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::InvalidSpec(format!("cannot start worker threads: {e}")))
}

fn solve_one(id: SolverId, x: &Array2<f64>, settings: &SolverSettings, repeat: usize, seed: u64) -> RunResult {
    let (n, t) = x.dim();
    let (status, error, trace) = match run_solver(id, x.view(), settings, seed) {
        Ok(res) => (res.status.into(), None, res.trace),
        Err(IcaError::Diverged { trace, .. }) => (RunStatus::Diverged, Some("solver diverged".to_string()), trace),
        Err(e) => (RunStatus::Diverged, Some(e.to_string()), ConvergenceTrace::default()),
    };
    RunResult { solver: id, repeat, seed, n, t, status, error, trace }
}

/// Runs every solver in `spec` on every repeat and writes trace files,
/// `summary.json` and optionally `convergence.svg` under `spec.out_dir`.
pub fn run_benchmark(spec: &RunSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let loaded = match &spec.data {
        DataSource::File { path } => {
            let m = load_matrix(path)?;
            spec.check_sizes(m.n_channels(), m.n_samples())?;
            Some(m)
        }
        DataSource::Experiment { .. } => None,
    };
    let trace_dir = spec.out_dir.join("traces");
    fs::create_dir_all(&trace_dir)?;

    let pool = thread_pool(spec.sequential)?;
    let per_repeat: Vec<Result<Vec<RunResult>, BenchError>> = pool.install(|| {
        (0..spec.repeats)
            .into_par_iter()
            .map(|r| {
                let seed = spec.seed.wrapping_add(r as u64);
                let x = repeat_data(&spec.data, seed, loaded.as_ref())?.into_inner();
                Ok(spec
                    .solvers
                    .iter()
                    .map(|&id| solve_one(id, &x, &spec.settings, r, seed))
                    .collect())
            })
            .collect()
    });
    let mut runs = Vec::new();
    for r in per_repeat {
        runs.extend(r?);
    }

    for run in &runs {
        let file = TraceFile {
            solver: run.solver,
            config: spec.settings.describe(run.solver),
            n: run.n,
            t: run.t,
            seed: run.seed,
            status: run.status,
            records: run.trace.records.clone(),
        };
        write_json(&trace_dir.join(trace_file_name(run.solver, run.repeat)), &file)?;
    }

    let summary = BenchSummary {
        solvers: spec.solvers.iter().map(|&id| summarize(spec, id, &runs)).collect(),
    };
    write_json(&spec.out_dir.join("summary.json"), &summary)?;
    if spec.svg {
        fs::write(spec.out_dir.join("convergence.svg"), render_svg(&summary))?;
    }
    Ok(BenchReport { summary, runs })
}

fn summarize(spec: &RunSpec, id: SolverId, runs: &[RunResult]) -> SolverSummary {
    let tol = spec.settings.solver.tol;
    let mine: Vec<&RunResult> = runs.iter().filter(|r| r.solver == id).collect();
    let outcomes: Vec<RunOutcome> = mine
        .iter()
        .map(|r| {
            let last = r.trace.last().map(|l| l.grad_inf);
            RunOutcome {
                repeat: r.repeat,
                seed: r.seed,
                status: r.status,
                iterations: r.trace.last().map_or(0, |l| l.iter),
                final_grad_inf: last,
                reached_tol: !r.failed() && last.is_some_and(|g| g <= tol),
                failed: r.failed(),
                error: r.error.clone(),
                trace_file: format!("traces/{}", trace_file_name(id, r.repeat)),
            }
        })
        .collect();
    let ok: Vec<&ConvergenceTrace> = mine.iter().filter(|r| !r.failed()).map(|r| &r.trace).collect();
    let failed_runs = mine.len() - ok.len();
    let mut warnings = Vec::new();
    if failed_runs > 0 {
        warnings.push(format!(
            "{failed_runs} of {} runs diverged and are excluded from the medians",
            mine.len()
        ));
    }
    let reached = outcomes.iter().filter(|o| o.reached_tol).count();
    let mut to_tol: Vec<f64> = ok
        .iter()
        .map(|t| t.iterations_to(tol).map_or(f64::INFINITY, |k| k as f64))
        .collect();
    let (n, t) = mine.first().map_or((0, 0), |r| (r.n, r.t));
    SolverSummary {
        solver: id,
        config: spec.settings.describe(id),
        data: spec.data.clone(),
        n,
        t,
        base_seed: spec.seed,
        seeds: mine.iter().map(|r| r.seed).collect(),
        tol,
        reached_tol_fraction: reached as f64 / mine.len().max(1) as f64,
        failed_runs,
        median_iterations_to_tol: if to_tol.is_empty() {
            None
        } else {
            Some(median(&mut to_tol)).filter(|m| m.is_finite())
        },
        warnings,
        runs: outcomes,
        median: MedianCurve::from_traces(&ok),
    }
}

/// Combined per-iteration table for every solver and repeat.
pub fn comparison_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("solver,repeat,iter,time,grad_norm,loss,n2t_product_count\n");
    for run in runs {
        for rec in &run.trace.records {
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{}\n",
                run.solver, run.repeat, rec.iter, rec.time_s, rec.grad_inf, rec.loss, rec.n2t_products
            ));
        }
    }
    s
}

/// Like [`run_benchmark`], and also writes `comparison.csv`.
pub fn compare(spec: &RunSpec) -> Result<BenchReport, BenchError> {
    let report = run_benchmark(spec)?;
    fs::write(spec.out_dir.join("comparison.csv"), comparison_csv(&report.runs))?;
    Ok(report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<BenchSummary, BenchError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
