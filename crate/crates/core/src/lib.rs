//! Maximum-likelihood independent component analysis.
//!
//! The main solver, [`picard::picard_solve`], minimizes the Infomax negative
//! log-likelihood with L-BFGS whose initial Hessian is a regularized
//! block-diagonal approximation of the relative Hessian. The
//! [`baselines`] module holds the comparison methods (oracle gradient
//! descent, stochastic Infomax, simple quasi-Newton, truncated Newton,
//! vanilla L-BFGS), all built on the same primitives.
//!
//! ```no_run
//! use ica_core::datagen::{gen_experiment, Experiment};
//! use ica_core::picard::{picard_solve, SolverConfig};
//! use ica_core::prep::{preprocess, DataMatrix};
//! use ndarray::Array2;
//!
//! let problem = gen_experiment(Experiment::A, 0, None, None)?;
//! let (white, _) = preprocess(&DataMatrix::new(problem.observed)?)?;
//! let result = picard_solve(white.view(), Array2::eye(white.n_channels()), &SolverConfig::default())?;
//! println!("{} iterations", result.trace.len());
//! # Ok::<(), ica_core::IcaError>(())
//! ```
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod curvature;
pub mod datagen;
mod error;
pub mod linalg;
pub mod model;
pub mod picard;
pub mod prep;
pub mod trace;

pub use error::{IcaError, Result};
