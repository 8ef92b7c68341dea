//! The fixed-density Infomax likelihood: score function, loss and relative
//! gradient.
//!
//! The source density is `-log p(y) = 2 log cosh(y / 2)`, whose score is
//! `psi(y) = tanh(y / 2)`. The additive normalization constant is dropped so
//! that `loss(I, 0) = 0`.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{IcaError, Result};
use crate::linalg::log_abs_det;

/// Density family of the sources. Only the standard Infomax density is
/// provided.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScoreModel {
    #[default]
    Infomax,
}

impl ScoreModel {
    #[inline]
    pub fn neg_log_density(self, y: f64) -> f64 {
        match self {
            ScoreModel::Infomax => neg_log_density(y),
        }
    }

    #[inline]
    pub fn score(self, y: f64) -> f64 {
        match self {
            ScoreModel::Infomax => score(y),
        }
    }

    #[inline]
    pub fn score_deriv(self, y: f64) -> f64 {
        match self {
            ScoreModel::Infomax => score_deriv(y),
        }
    }
}

/// `2 log cosh(y / 2)`, written so it cannot overflow for large |y|.
#[inline]
pub fn neg_log_density(y: f64) -> f64 {
    let a = y.abs();
    a + 2.0 * (-a).exp().ln_1p() - 2.0 * std::f64::consts::LN_2
}

/// `tanh(y / 2)`
#[inline]
pub fn score(y: f64) -> f64 {
    (0.5 * y).tanh()
}

/// `1 / (2 cosh^2(y / 2))`, the derivative of [`score`].
#[inline]
pub fn score_deriv(y: f64) -> f64 {
    let e = (-y.abs()).exp();
    2.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Elementwise score and score derivative of the sources.
#[derive(Debug, Clone)]
pub struct ScoreMaps {
    pub psi: Array2<f64>,
    pub psi_deriv: Array2<f64>,
}

impl ScoreMaps {
    pub fn new(y: ArrayView2<'_, f64>) -> Self {
        let mut psi = Array2::zeros(y.raw_dim());
        let mut psi_deriv = Array2::zeros(y.raw_dim());
        Zip::from(&mut psi)
            .and(&mut psi_deriv)
            .and(y)
            .for_each(|p, d, &v| {
                // With e = exp(-|y|), tanh(|y|/2) = (1 - e) / (1 + e) and
                // psi' = 2e / (1 + e)^2.
                let a = v.abs();
                let (t, e) = if a < 0.5 {
                    let em = (-a).exp_m1();
                    (-em / (2.0 + em), em + 1.0)
                } else {
                    let e = (-a).exp();
                    ((1.0 - e) / (1.0 + e), e)
                };
                *p = t.copysign(v);
                *d = 2.0 * e / ((1.0 + e) * (1.0 + e));
            });
        Self { psi, psi_deriv }
    }
}

/// Average over samples of `sum_i -log p(y_i(t))`.
pub fn density_term(y: ArrayView2<'_, f64>) -> f64 {
    let t = y.ncols() as f64;
    // Row-wise partial sums keep the reduction order fixed.
    y.axis_iter(Axis(0))
        .map(|row| row.iter().map(|&v| neg_log_density(v)).sum::<f64>())
        .sum::<f64>()
        / t
}

/// `neg_log_density(a + d) - neg_log_density(a)`, free of cancellation when
/// `d` is small.
#[inline]
pub fn neg_log_density_change(a: f64, d: f64) -> f64 {
    let h = 0.5 * d;
    if h.abs() > 0.5 {
        return neg_log_density(a + d) - neg_log_density(a);
    }
    // cosh(x + h) / cosh(x) = 1 + 2 sinh^2(h / 2) + tanh(x) sinh(h)
    let s = (0.5 * h).sinh();
    2.0 * (2.0 * s * s + (0.5 * a).tanh() * h.sinh()).ln_1p()
}

/// Change of [`density_term`] when `Y` moves to `Y + D`.
pub fn density_change(y: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> f64 {
    let t = y.ncols() as f64;
    y.axis_iter(Axis(0))
        .zip(d.axis_iter(Axis(0)))
        .map(|(yr, dr)| {
            yr.iter()
                .zip(dr.iter())
                .map(|(&a, &b)| neg_log_density_change(a, b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / t
}

/// Negative averaged log-likelihood `-log|det W| + mean_t sum_i -log p(y_i(t))`
/// with `Y = W X` supplied by the caller.
pub fn loss(w: &Array2<f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    let log_det = log_abs_det(w.view());
    let value = -log_det + density_term(y);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IcaError::NonFiniteLoss)
    }
}

/// Relative gradient `G = (1/T) psi(Y) Y^T - I`.
pub fn relative_gradient(y: ArrayView2<'_, f64>) -> Array2<f64> {
    let maps = ScoreMaps::new(y);
    relative_gradient_from(&maps.psi, y)
}

/// Relative gradient from a precomputed score map.
pub fn relative_gradient_from(psi: &Array2<f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    let t = y.ncols() as f64;
    let mut g = psi.dot(&y.t()) / t;
    for i in 0..g.nrows() {
        g[[i, i]] -= 1.0;
    }
    g
}

/// Current iterate of a solver: unmixing matrix, sources and cached
/// loss and gradient.
#[derive(Debug, Clone)]
pub struct UnmixingState {
    pub w: Array2<f64>,
    pub y: Array2<f64>,
    pub loss: f64,
    pub gradient: Array2<f64>,
}

impl UnmixingState {
    /// Builds the state at `w` for data `x`, computing `Y = W X`.
    pub fn new(w: Array2<f64>, x: ArrayView2<'_, f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.ncols() != x.nrows() {
            return Err(IcaError::Shape(format!(
                "unmixing matrix is {:?} but data has {} channels",
                w.dim(),
                x.nrows()
            )));
        }
        let y = w.dot(&x);
        let loss = loss(&w, y.view())?;
        let gradient = relative_gradient(y.view());
        Ok(Self { w, y, loss, gradient })
    }

    /// Whether `Y = W X` holds to `rel_tol` in relative Frobenius norm.
    pub fn is_consistent(&self, x: ArrayView2<'_, f64>, rel_tol: f64) -> bool {
        let fresh = self.w.dot(&x);
        let num: f64 = fresh.iter().zip(self.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = fresh.iter().map(|a| a * a).sum();
        num.sqrt() <= rel_tol * den.sqrt().max(f64::MIN_POSITIVE)
    }
}
