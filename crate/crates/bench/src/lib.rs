//! Benchmark harness for the ICA solvers: data files, repeated runs with
//! median convergence curves, trace files and plots.

use std::path::PathBuf;

use ica_core::IcaError;
use thiserror::Error;

pub mod io;
pub mod median;
pub mod run;
pub mod solvers;
pub mod svg;

pub use io::{load_matrix, save_matrix, FormatError};
pub use median::MedianCurve;
pub use run::{compare, run_benchmark, BenchReport, BenchSummary, DataSource, RunSpec};
pub use solvers::{Precond, SolverId, SolverSettings};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: IcaError },

    #[error("{0}")]
    InvalidSpec(String),

    #[error("all {0} runs diverged")]
    AllDiverged(usize),

    #[error(transparent)]
    Core(#[from] IcaError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Format { .. } | BenchError::Data { .. } | BenchError::Json(_) => 2,
            BenchError::AllDiverged(_) => 3,
            BenchError::InvalidSpec(_) => 4,
            BenchError::Core(IcaError::InvalidConfig(_) | IcaError::OracleCapExceeded { .. }) => 4,
            BenchError::Core(_) | BenchError::Io(_) => 1,
        }
    }
}
