//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

pub fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Frobenius inner product <A|B> = sum_ij A_ij B_ij.
pub fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    inner(a, a).sqrt()
}

pub fn frobenius_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// max_ij |A_ij|
pub fn inf_norm(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m })
}

/// log |det A| through an LU factorization; `-inf` when A is singular.
pub fn log_abs_det(a: ArrayView2<'_, f64>) -> f64 {
    let (r, c) = a.dim();
    debug_assert_eq!(r, c);
    let m = DMatrix::from_fn(r, c, |i, j| a[[i, j]]);
    let lu = m.lu();
    lu.u().diagonal().iter().map(|d| d.abs().ln()).sum()
}

/// log |det(I + E)|, accurate to relative precision when E is small.
///
/// Small perturbations use the trace series `sum_k (-1)^(k+1) tr(E^k) / k`;
/// larger ones fall back to [`log_abs_det`].
pub fn log_abs_det_identity_plus(e: &Array2<f64>) -> f64 {
    if frobenius(e) >= 0.25 {
        let mut m = e.clone();
        for i in 0..m.nrows() {
            m[[i, i]] += 1.0;
        }
        return log_abs_det(m.view());
    }
    let mut power = e.clone();
    let mut sum = power.diag().sum();
    for k in 2..=200 {
        power = power.dot(e);
        let term = power.diag().sum() / k as f64;
        let term = if k % 2 == 0 { -term } else { term };
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || term.abs() < 1e-300 {
            break;
        }
    }
    sum
}

/// Returns I + alpha * P.
pub fn identity_plus(alpha: f64, p: &Array2<f64>) -> Array2<f64> {
    let mut m = p * alpha;
    for i in 0..m.nrows() {
        m[[i, i]] += 1.0;
    }
    m
}

pub fn invert(a: &Array2<f64>) -> Option<Array2<f64>> {
    to_nalgebra(a).try_inverse().map(|m| from_nalgebra(&m))
}
