//! Centering and whitening of observed signals.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{IcaError, Result};
use crate::linalg::{from_nalgebra, to_nalgebra};

/// Eigenvalues below this fraction of the largest one make the covariance
/// count as rank deficient.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// An N x T matrix of signals, one channel per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    /// Wraps `values`, checking N >= 2, T >= N and that every entry is finite.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, t) = values.dim();
        if n < 2 {
            return Err(IcaError::InvalidData(format!(
                "need at least 2 channels, got {n}"
            )));
        }
        if t < n {
            return Err(IcaError::InvalidData(format!(
                "need at least as many samples as channels, got {n} x {t}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(IcaError::InvalidData(format!(
                "non-finite entry at row {}, column {}",
                pos / t,
                pos % t
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }
}

/// The linear map applied by [`whiten`], kept so the transform can be
/// reapplied or composed with a mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    /// Symmetric inverse square root of the empirical covariance.
    pub matrix: Array2<f64>,
    /// Row means removed by [`center`]; zero when whitening already-centered data.
    pub means: Array1<f64>,
}

/// Subtracts each row's mean. Returns the centered data and the means.
pub fn center(data: &DataMatrix) -> Result<(DataMatrix, Array1<f64>)> {
    let mut values = data.values.clone();
    let mut means = Array1::zeros(values.nrows());
    for (mut row, mean) in values.axis_iter_mut(Axis(0)).zip(means.iter_mut()) {
        // A second pass removes the rounding residue left by the first.
        for _ in 0..2 {
            let m = row.sum() / row.len() as f64;
            row.mapv_inplace(|v| v - m);
            *mean += m;
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IcaError::InvalidData("centering produced non-finite values".into()));
    }
    Ok((DataMatrix { values }, means))
}

/// Empirical covariance (1/T) X X^T of data assumed centered.
pub fn covariance(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let t = x.ncols() as f64;
    let mut c = x.dot(&x.t()) / t;
    symmetrize(&mut c);
    c
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Symmetric inverse square root U diag(1/sqrt(l)) U^T of an SPD matrix.
pub fn inverse_sqrt(c: &Array2<f64>) -> Result<Array2<f64>> {
    let n = c.nrows();
    let eig = SymmetricEigen::new(to_nalgebra(c));
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let deficient = eig
        .eigenvalues
        .iter()
        .filter(|&&l| !(l > RANK_THRESHOLD * max) || max <= 0.0)
        .count();
    if deficient > 0 {
        return Err(IcaError::RankDeficient { deficient, n });
    }
    let u = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| u[(i, j)] / eig.eigenvalues[j].sqrt());
    let mut k = from_nalgebra(&(scaled * u.transpose()));
    symmetrize(&mut k);
    Ok(k)
}

/// Whitens centered data: returns C^(-1/2) X and the transform, where
/// C = (1/T) X X^T.
pub fn whiten(data: &DataMatrix) -> Result<(DataMatrix, WhiteningTransform)> {
    let c = covariance(data.view());
    let k = inverse_sqrt(&c)?;
    let values = k.dot(data.values());
    Ok((
        DataMatrix { values },
        WhiteningTransform {
            matrix: k,
            means: Array1::zeros(data.n_channels()),
        },
    ))
}

/// Centers then whitens, recording the removed means in the transform.
pub fn preprocess(data: &DataMatrix) -> Result<(DataMatrix, WhiteningTransform)> {
    let (centered, means) = center(data)?;
    let (white, mut transform) = whiten(&centered)?;
    transform.means = means;
    Ok((white, transform))
}
