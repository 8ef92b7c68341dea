use thiserror::Error;

use crate::trace::ConvergenceTrace;

pub type Result<T> = std::result::Result<T, IcaError>;

#[derive(Debug, Error)]
pub enum IcaError {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("covariance is rank deficient: {deficient} of {n} eigenvalues below the relative threshold")]
    RankDeficient { deficient: usize, n: usize },

    #[error("loss is not finite (unmixing matrix singular or sources overflowed)")]
    NonFiniteLoss,

    #[error("full Hessian requested for N = {n}, above the cap of {cap}; use the Hessian-free product instead")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("singular preconditioner at block ({i}, {j}); regularize the approximation first")]
    SingularPreconditioner { i: usize, j: usize },

    #[error("solver diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: ConvergenceTrace,
    },

    #[error("rejection sampler stalled after {draws} proposals for {accepted} accepted samples")]
    SamplerStall { draws: u64, accepted: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}
