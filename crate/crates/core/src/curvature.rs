//! Relative Hessian of the likelihood, Hessian-free products, and the two
//! block-diagonal approximations used as preconditioners.
//!
//! Tensors act on N x N matrices through `(B M)_ij = sum_kl B_ijkl M_kl`.
//! The exact relative Hessian is
//! `H_ijkl = d_il d_jk + d_ik h_ijl` with `h_ijl = E[psi'(y_i) y_j y_l]`.
//! The approximations keep only the 2 x 2 blocks coupling `(i, j)` with
//! `(j, i)` plus the 1 x 1 diagonal blocks `(i, i)`.

use nalgebra::SymmetricEigen;
use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{IcaError, Result};
use crate::model::ScoreMaps;

/// Largest N for which [`full_hessian`] builds the dense tensor by default.
pub const DEFAULT_ORACLE_CAP: usize = 32;

/// Dense relative Hessian, for small problems.
#[derive(Debug, Clone)]
pub struct FullHessian {
    /// `moments[[i, j, l]] = E[psi'(y_i) y_j y_l]`
    pub moments: Array3<f64>,
    /// `tensor[[i, j, k, l]] = H_ijkl`
    pub tensor: Array4<f64>,
}

impl FullHessian {
    pub fn n(&self) -> usize {
        self.moments.dim().0
    }

    /// `H M`
    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let n = self.n();
        let flat = self.dense_operator();
        let v = m.to_shape(n * n).unwrap().to_owned();
        flat.dot(&v).into_shape_with_order((n, n)).unwrap()
    }

    /// `<E | H | E>`
    pub fn quadratic_form(&self, e: &Array2<f64>) -> f64 {
        crate::linalg::inner(e, &self.apply(e))
    }

    /// The tensor reshaped as an N^2 x N^2 matrix, row `i N + j`, column `k N + l`.
    pub fn dense_operator(&self) -> Array2<f64> {
        let n = self.n();
        self.tensor
            .to_shape((n * n, n * n))
            .unwrap()
            .to_owned()
    }

    /// Smallest eigenvalue of the symmetric part of [`Self::dense_operator`].
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dense_operator();
        let sym = (&d + &d.t()) * 0.5;
        let eig = SymmetricEigen::new(crate::linalg::to_nalgebra(&sym));
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Diagonal shift making the Hessian usable by a Newton solver:
    /// `-2 lambda_min` when the smallest eigenvalue is negative, else 0.
    pub fn newton_shift(&self) -> f64 {
        let lm = self.min_eigenvalue();
        if lm < 0.0 {
            -2.0 * lm
        } else {
            0.0
        }
    }
}

/// Builds the exact relative Hessian. Costs `N^3 T`; refuses N above `cap`.
pub fn full_hessian(y: ArrayView2<'_, f64>, cap: usize) -> Result<FullHessian> {
    let maps = ScoreMaps::new(y);
    full_hessian_from(&maps.psi_deriv, y, cap)
}

pub fn full_hessian_from(
    psi_deriv: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    cap: usize,
) -> Result<FullHessian> {
    let (n, t) = y.dim();
    if n > cap {
        return Err(IcaError::OracleCapExceeded { n, cap });
    }
    let mut moments = Array3::zeros((n, n, n));
    let mut weighted = Array2::zeros((n, t));
    for i in 0..n {
        let d = psi_deriv.row(i);
        Zip::from(weighted.rows_mut())
            .and(y.rows())
            .for_each(|mut out, row| {
                Zip::from(&mut out).and(&row).and(&d).for_each(|o, &v, &w| *o = v * w);
            });
        let block = weighted.dot(&y.t()) / t as f64;
        moments.index_axis_mut(Axis(0), i).assign(&block);
    }
    let mut tensor = Array4::zeros((n, n, n, n));
    for i in 0..n {
        for j in 0..n {
            tensor[[i, j, j, i]] += 1.0;
            for l in 0..n {
                tensor[[i, j, i, l]] += moments[[i, j, l]];
            }
        }
    }
    Ok(FullHessian { moments, tensor })
}

/// `H M = M^T + (1/T) [psi'(Y) .* (M Y)] Y^T`, without forming `H`.
pub fn hessian_free_product(y: ArrayView2<'_, f64>, m: &Array2<f64>) -> Array2<f64> {
    let maps = ScoreMaps::new(y);
    hessian_free_product_from(&maps.psi_deriv, y, m)
}

pub fn hessian_free_product_from(
    psi_deriv: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    m: &Array2<f64>,
) -> Array2<f64> {
    let t = y.ncols() as f64;
    let mut my = m.dot(&y);
    my *= psi_deriv;
    let mut out = my.dot(&y.t()) / t;
    out += &m.t();
    out
}

/// Which block-diagonal approximation a [`BlockDiagApprox`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    H1,
    H2,
}

impl std::str::FromStr for ApproxKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(ApproxKind::H1),
            "h2" => Ok(ApproxKind::H2),
            other => Err(format!("unknown approximation '{other}', expected h1 or h2")),
        }
    }
}

/// Block-diagonal Hessian approximation stored through its coefficients
/// `a_ij = H~_ijij`. The swap coefficients `H~_ijji` (i != j) are 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagApprox {
    pub a: Array2<f64>,
    pub kind: ApproxKind,
    pub regularized: bool,
    pub lambda_min: Option<f64>,
}

impl BlockDiagApprox {
    pub fn new(a: Array2<f64>, kind: ApproxKind) -> Self {
        Self {
            a,
            kind,
            regularized: false,
            lambda_min: None,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Forward application `H~ M`: `a_ij M_ij + M_ji` off the diagonal and
    /// `a_ii M_ii` on it.
    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                self.a[[i, i]] * m[[i, i]]
            } else {
                self.a[[i, j]] * m[[i, j]] + m[[j, i]]
            }
        })
    }

    /// The implied tensor reshaped to N^2 x N^2 (same layout as
    /// [`FullHessian::dense_operator`]).
    pub fn dense_operator(&self) -> Array2<f64> {
        let n = self.n();
        let mut d = Array2::zeros((n * n, n * n));
        for i in 0..n {
            for j in 0..n {
                d[[i * n + j, i * n + j]] = self.a[[i, j]];
                if i != j {
                    d[[i * n + j, j * n + i]] = 1.0;
                }
            }
        }
        d
    }
}

/// `H~2`: `a_ij = E[psi'(y_i) y_j^2]` off the diagonal, `a_ii = 1 + E[psi'(y_i) y_i^2]`.
pub fn approx_h2(y: ArrayView2<'_, f64>) -> BlockDiagApprox {
    let maps = ScoreMaps::new(y);
    approx_h2_from(&maps.psi_deriv, y)
}

/// `H~2` from a precomputed score derivative map. One `N^2 T` product.
pub fn approx_h2_from(psi_deriv: &Array2<f64>, y: ArrayView2<'_, f64>) -> BlockDiagApprox {
    let t = y.ncols() as f64;
    let y2 = y.mapv(|v| v * v);
    let mut a = psi_deriv.dot(&y2.t()) / t;
    for i in 0..a.nrows() {
        a[[i, i]] += 1.0;
    }
    BlockDiagApprox::new(a, ApproxKind::H2)
}

/// `H~1`: `a_ij = E[psi'(y_i)] E[y_j^2]` off the diagonal,
/// `a_ii = 1 + E[psi'(y_i) y_i^2]`.
pub fn approx_h1(y: ArrayView2<'_, f64>) -> BlockDiagApprox {
    let maps = ScoreMaps::new(y);
    approx_h1_from(&maps.psi_deriv, y)
}

/// `H~1` from a precomputed score derivative map. Only `N T` work.
pub fn approx_h1_from(psi_deriv: &Array2<f64>, y: ArrayView2<'_, f64>) -> BlockDiagApprox {
    let (n, t) = y.dim();
    let t = t as f64;
    let h = psi_deriv.sum_axis(Axis(1)) / t;
    let sigma2 = y.mapv(|v| v * v).sum_axis(Axis(1)) / t;
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| h[i] * sigma2[j]);
    for i in 0..n {
        let hii = psi_deriv
            .row(i)
            .iter()
            .zip(y.row(i))
            .map(|(d, v)| d * v * v)
            .sum::<f64>()
            / t;
        a[[i, i]] = 1.0 + hii;
    }
    BlockDiagApprox::new(a, ApproxKind::H1)
}

/// Builds the approximation of the requested kind.
pub fn approx_from(kind: ApproxKind, psi_deriv: &Array2<f64>, y: ArrayView2<'_, f64>) -> BlockDiagApprox {
    match kind {
        ApproxKind::H1 => approx_h1_from(psi_deriv, y),
        ApproxKind::H2 => approx_h2_from(psi_deriv, y),
    }
}

/// Smallest eigenvalue of the block `[[a_ij, 1], [1, a_ji]]`.
#[inline]
pub fn block_eigenvalue_min(a_ij: f64, a_ji: f64) -> f64 {
    0.5 * (a_ij + a_ji - ((a_ij - a_ji).powi(2) + 4.0).sqrt())
}

/// Shifts every 2 x 2 block whose smallest eigenvalue is below `lambda_min`
/// so that it equals `lambda_min`, and floors diagonal coefficients at
/// `lambda_min`.
pub fn regularize(approx: &BlockDiagApprox, lambda_min: f64) -> BlockDiagApprox {
    assert!(lambda_min > 0.0, "lambda_min must be positive");
    let n = approx.n();
    let mut a = approx.a.clone();
    for i in 0..n {
        if a[[i, i]] < lambda_min {
            a[[i, i]] = lambda_min;
        }
        for j in (i + 1)..n {
            let lam = block_eigenvalue_min(a[[i, j]], a[[j, i]]);
            if lam < lambda_min {
                let shift = lambda_min - lam;
                a[[i, j]] += shift;
                a[[j, i]] += shift;
            }
        }
    }
    BlockDiagApprox {
        a,
        kind: approx.kind,
        regularized: true,
        lambda_min: Some(lambda_min),
    }
}

/// `H~^-1 G` in closed form, block by block.
pub fn block_solve(approx: &BlockDiagApprox, g: &Array2<f64>) -> Result<Array2<f64>> {
    let n = approx.n();
    let a = &approx.a;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let aii = a[[i, i]];
        if aii == 0.0 || !aii.is_finite() {
            return Err(IcaError::SingularPreconditioner { i, j: i });
        }
        out[[i, i]] = g[[i, i]] / aii;
        for j in (i + 1)..n {
            let det = a[[i, j]] * a[[j, i]] - 1.0;
            if det == 0.0 || !det.is_finite() {
                return Err(IcaError::SingularPreconditioner { i, j });
            }
            out[[i, j]] = (a[[j, i]] * g[[i, j]] - g[[j, i]]) / det;
            out[[j, i]] = (a[[i, j]] * g[[j, i]] - g[[i, j]]) / det;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_density, DensityKind};
    use crate::linalg::{frobenius, from_nalgebra, identity_plus, inner, to_nalgebra};
    use crate::model::loss;
    use crate::prep::{preprocess, DataMatrix};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn gaussian(n: usize, t: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, t), || StandardNormal.sample(&mut rng))
    }

    fn laplace_sources(n: usize, t: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = Array2::from_shape_vec(
            (n, t),
            sample_density(DensityKind::Laplace, n * t, &mut rng).unwrap(),
        )
        .unwrap();
        preprocess(&DataMatrix::new(s).unwrap()).unwrap().0.into_inner()
    }

    fn random_approx(n: usize, seed: u64) -> BlockDiagApprox {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let u = Uniform::new(-2.0, 3.0).unwrap();
        BlockDiagApprox::new(Array2::from_shape_simple_fn((n, n), || u.sample(&mut rng)), ApproxKind::H2)
    }

    /// Direct sum over the tensor definition, independent of the reshaping.
    fn tensor_contract(h: &FullHessian, m: &Array2<f64>) -> Array2<f64> {
        let n = h.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += h.tensor[[i, j, k, l]] * m[[k, l]];
                }
            }
            s
        })
    }

    #[test]
    fn hessian_of_zero_sources_is_the_swap() {
        let h = full_hessian(Array2::zeros((3, 10)).view(), DEFAULT_ORACLE_CAP).unwrap();
        assert!(h.moments.iter().all(|&v| v == 0.0));
        for ((i, j, k, l), &v) in h.tensor.indexed_iter() {
            let expected = if i == l && j == k { 1.0 } else { 0.0 };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn hessian_respects_the_oracle_cap() {
        let err = full_hessian(Array2::zeros((5, 10)).view(), 4).unwrap_err();
        assert!(matches!(err, IcaError::OracleCapExceeded { n: 5, cap: 4 }));
    }

    #[test]
    fn hessian_structure_is_reproducible_from_moments() {
        let y = gaussian(3, 200, 1);
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        for ((i, j, k, l), &v) in h.tensor.indexed_iter() {
            let mut e = 0.0;
            if i == l && j == k {
                e += 1.0;
            }
            if i == k {
                e += h.moments[[i, j, l]];
            }
            assert_eq!(v, e);
        }
    }

    #[test]
    fn quadratic_form_matches_second_difference() {
        let x = gaussian(4, 1000, 2);
        let w = Array2::eye(4) + gaussian(4, 4, 3) * 0.2;
        let y = w.dot(&x);
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        let mut e = gaussian(4, 4, 4);
        e /= frobenius(&e);
        let step = 1e-3;
        let eval = |s: f64| {
            let m = identity_plus(s, &e);
            let wn = m.dot(&w);
            loss(&wn, m.dot(&y).view()).unwrap()
        };
        let fd = (eval(step) - 2.0 * eval(0.0) + eval(-step)) / (step * step);
        let q = h.quadratic_form(&e);
        assert!(((fd - q) / q).abs() < 1e-4, "{fd} vs {q}");
    }

    #[test]
    fn off_block_moments_vanish_for_independent_sources() {
        let t = 100_000;
        let y = laplace_sources(4, t, 5);
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        let a = approx_h2(y.view());
        let bound = 10.0 / (t as f64).sqrt();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                for l in 0..4 {
                    let target = if j == l { a.a[[i, j]] } else { 0.0 };
                    assert!((h.tensor[[i, j, i, l]] - target).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn hessian_free_product_edge_cases() {
        let y = gaussian(3, 50, 6);
        let zero = hessian_free_product(y.view(), &Array2::zeros((3, 3)));
        assert!(zero.iter().all(|&v| v == 0.0));
        let m = gaussian(3, 3, 7);
        let p = hessian_free_product(Array2::zeros((3, 50)).view(), &m);
        assert_eq!(p, m.t().to_owned());
    }

    #[test]
    fn hessian_free_product_matches_dense_contraction() {
        let y = gaussian(5, 500, 8);
        let m = gaussian(5, 5, 9);
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        let dense = tensor_contract(&h, &m);
        let free = hessian_free_product(y.view(), &m);
        let rel = crate::linalg::frobenius_distance(&dense, &free) / frobenius(&dense);
        assert!(rel < 1e-10, "{rel}");
        assert!(crate::linalg::frobenius_distance(&h.apply(&m), &dense) / frobenius(&dense) < 1e-12);
    }

    #[test]
    fn approximations_of_zero_sources() {
        let z = Array2::zeros((4, 30));
        let h2 = approx_h2(z.view());
        assert_eq!(h2.a, Array2::eye(4));
        let h1 = approx_h1(z.view());
        assert_eq!(h1.a, Array2::eye(4));
    }

    #[test]
    fn h2_matches_naive_double_loop() {
        let y = gaussian(4, 1000, 10);
        let a = approx_h2(y.view());
        let t = y.ncols();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..t {
                    s += crate::model::score_deriv(y[[i, k]]) * y[[j, k]] * y[[j, k]];
                }
                let expected = s / t as f64 + if i == j { 1.0 } else { 0.0 };
                assert!(((a.a[[i, j]] - expected) / expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h2_blocks_equal_true_hessian_entries() {
        let y = gaussian(3, 400, 11);
        let a = approx_h2(y.view());
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.a[[i, j]] - h.tensor[[i, j, i, j]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn h1_with_constant_score_derivative() {
        let y = gaussian(3, 2000, 12);
        let y = preprocess(&DataMatrix::new(y).unwrap()).unwrap().0.into_inner();
        let c = 0.3;
        let a = approx_h1_from(&Array2::from_elem(y.raw_dim(), c), y.view());
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((a.a[[i, j]] - c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn h1_and_h2_agree_for_independent_sources() {
        let t = 100_000;
        let y = laplace_sources(4, t, 13);
        let h1 = approx_h1(y.view());
        let h2 = approx_h2(y.view());
        let bound = 10.0 / (t as f64).sqrt();
        for i in 0..4 {
            assert!((h1.a[[i, i]] - h2.a[[i, i]]).abs() < 1e-13);
            for j in 0..4 {
                assert!((h1.a[[i, j]] - h2.a[[i, j]]).abs() <= bound);
            }
        }
    }

    #[test]
    fn block_eigenvalue_special_cases() {
        assert_eq!(block_eigenvalue_min(2.0, 2.0), 1.0);
        assert_eq!(block_eigenvalue_min(0.0, 0.0), -1.0);
    }

    #[test]
    fn block_eigenvalue_matches_symmetric_eigensolver() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let u = Uniform::new(-5.0, 5.0).unwrap();
        for _ in 0..200 {
            let (p, q) = (u.sample(&mut rng), u.sample(&mut rng));
            let m = nalgebra::Matrix2::<f64>::new(p, 1.0, 1.0, q);
            let e: nalgebra::Vector2<f64> = m.symmetric_eigenvalues();
            let lo = e[0].min(e[1]);
            assert!((block_eigenvalue_min(p, q) - lo).abs() < 1e-12);
        }
    }

    #[test]
    fn regularize_shifts_bad_blocks() {
        // a = a' = 0.5 gives eigenvalues -0.5 and 1.5.
        let approx = BlockDiagApprox::new(array![[1.0, 0.5], [0.5, 1.0]], ApproxKind::H2);
        let r = regularize(&approx, 0.01);
        assert!((r.a[[0, 1]] - 1.01).abs() < 1e-15);
        assert!((r.a[[1, 0]] - 1.01).abs() < 1e-15);
        assert!((block_eigenvalue_min(r.a[[0, 1]], r.a[[1, 0]]) - 0.01).abs() < 1e-12);
        assert!(r.regularized);
        assert_eq!(r.lambda_min, Some(0.01));
    }

    #[test]
    fn regularize_leaves_good_blocks() {
        let approx = BlockDiagApprox::new(array![[1.0, 4.0], [4.0, 1.0]], ApproxKind::H2);
        assert_eq!(block_eigenvalue_min(4.0, 4.0), 3.0);
        let r = regularize(&approx, 0.01);
        assert_eq!(r.a, approx.a);
    }

    #[test]
    fn regularize_floors_the_diagonal() {
        let approx = BlockDiagApprox::new(array![[-1.0, 4.0], [4.0, 0.001]], ApproxKind::H1);
        let r = regularize(&approx, 0.01);
        assert_eq!(r.a[[0, 0]], 0.01);
        assert_eq!(r.a[[1, 1]], 0.01);
    }

    #[test]
    fn regularized_blocks_clear_the_floor() {
        for seed in 0..20 {
            let r = regularize(&random_approx(7, seed), 1e-2);
            for i in 0..7 {
                assert!(r.a[[i, i]] >= 1e-2);
                for j in 0..7 {
                    if i != j {
                        assert!(block_eigenvalue_min(r.a[[i, j]], r.a[[j, i]]) >= 1e-2 - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn block_solve_substitution() {
        let approx = BlockDiagApprox::new(array![[1.0, 2.0], [2.0, 1.0]], ApproxKind::H2);
        let g = array![[0.0, 1.0], [0.0, 0.0]];
        let x = block_solve(&approx, &g).unwrap();
        assert!((x[[0, 1]] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn block_solve_detects_missing_regularization() {
        let approx = BlockDiagApprox::new(array![[1.0, 1.0], [1.0, 1.0]], ApproxKind::H2);
        assert!(matches!(
            block_solve(&approx, &Array2::eye(2)),
            Err(IcaError::SingularPreconditioner { i: 0, j: 1 })
        ));
        let approx = BlockDiagApprox::new(array![[0.0, 3.0], [3.0, 1.0]], ApproxKind::H2);
        assert!(matches!(
            block_solve(&approx, &Array2::eye(2)),
            Err(IcaError::SingularPreconditioner { i: 0, j: 0 })
        ));
    }

    #[test]
    fn block_solve_inverts_forward_application() {
        let r = regularize(&random_approx(5, 15), 1e-2);
        let g = gaussian(5, 5, 16);
        let back = r.apply(&block_solve(&r, &g).unwrap());
        for (x, y) in back.iter().zip(g.iter()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn block_solve_matches_dense_solve() {
        let n = 6;
        for seed in 0..5 {
            let r = regularize(&random_approx(n, 100 + seed), 1e-2);
            let g = gaussian(n, n, 200 + seed);
            let dense = to_nalgebra(&r.dense_operator());
            let rhs = nalgebra::DVector::from_iterator(n * n, g.iter().cloned());
            let sol = dense.lu().solve(&rhs).unwrap();
            let expected = from_nalgebra(&nalgebra::DMatrix::from_row_slice(n, n, sol.as_slice()));
            let got = block_solve(&r, &g).unwrap();
            let rel = crate::linalg::frobenius_distance(&got, &expected) / frobenius(&expected);
            assert!(rel < 1e-10, "{rel}");
        }
    }

    #[test]
    fn forward_application_only_couples_transposed_pairs() {
        let r = random_approx(4, 17);
        for k in 0..4 {
            for l in 0..4 {
                let mut e = Array2::zeros((4, 4));
                e[[k, l]] = 1.0;
                let out = r.apply(&e);
                for ((i, j), &v) in out.indexed_iter() {
                    if !((i, j) == (k, l) || (i, j) == (l, k)) {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn approximation_converges_to_true_hessian_with_samples() {
        let distance = |t: usize| {
            let y = laplace_sources(5, t, 18);
            let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
            let a = approx_h2(y.view());
            crate::linalg::frobenius_distance(&h.dense_operator(), &a.dense_operator())
        };
        let ratio = distance(1_000) / distance(100_000);
        assert!(ratio > 3.0, "ratio {ratio}");
    }

    #[test]
    fn newton_shift_makes_hessian_positive() {
        let y = gaussian(3, 300, 19) * 3.0;
        let h = full_hessian(y.view(), DEFAULT_ORACLE_CAP).unwrap();
        let lm = h.min_eigenvalue();
        let shift = h.newton_shift();
        if lm < 0.0 {
            assert_eq!(shift, -2.0 * lm);
        } else {
            assert_eq!(shift, 0.0);
        }
    }

    proptest! {
        #[test]
        fn regularize_is_idempotent(seed in 0u64..500, lam in 1e-4f64..0.5) {
            let once = regularize(&random_approx(5, seed), lam);
            let twice = regularize(&once, lam);
            for (x, y) in once.a.iter().zip(twice.a.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn hessian_free_product_is_linear(seed in 0u64..500, alpha in -3.0f64..3.0) {
            let y = gaussian(4, 100, seed);
            let m1 = gaussian(4, 4, seed + 1);
            let m2 = gaussian(4, 4, seed + 2);
            let lhs = hessian_free_product(y.view(), &(&m1 * alpha + &m2));
            let rhs = hessian_free_product(y.view(), &m1) * alpha + hessian_free_product(y.view(), &m2);
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn block_solve_roundtrip(seed in 0u64..500) {
            let r = regularize(&random_approx(4, seed), 1e-2);
            let m = gaussian(4, 4, seed + 3);
            let back = block_solve(&r, &r.apply(&m)).unwrap();
            let rel = crate::linalg::frobenius_distance(&back, &m) / frobenius(&m);
            prop_assert!(rel < 1e-10);
        }
    }

    #[test]
    fn quadratic_form_uses_frobenius_pairing() {
        let h = full_hessian(Array2::zeros((2, 4)).view(), DEFAULT_ORACLE_CAP).unwrap();
        let e = array![[1.0, 2.0], [3.0, 4.0]];
        // Pure swap: <E | E^T>.
        assert_eq!(h.quadratic_form(&e), inner(&e, &e.t().to_owned()));
    }
}
