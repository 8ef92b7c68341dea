//! Seeded synthetic ICA problems and a separation-quality metric.
//!
//! All randomness comes from `ChaCha20Rng::seed_from_u64(seed)`, so a problem
//! is a pure function of its experiment, seed and size overrides on every
//! platform.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IcaError, Result};
use crate::linalg::{log_abs_det, to_nalgebra};

/// Mixing matrices with `|det| <` this are redrawn.
pub const MIN_MIXING_DET: f64 = 1e-8;

/// Log of the envelope constant for `exp(-|x|^3) <= K exp(-x^2 / 2)`;
/// the ratio peaks at |x| = 1/3 where it equals `exp(1/54)`.
const CUBE_EXP_LOG_ENVELOPE: f64 = 1.0 / 54.0;
/// Acceptance rate of the cube-exp sampler, `2 Gamma(4/3) / (K sqrt(2 pi))`.
const CUBE_EXP_ACCEPTANCE: f64 = 0.6994;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DensityKind {
    /// `p(x) = exp(-|x|) / 2`
    Laplace,
    Gaussian,
    /// `p(x) ∝ exp(-|x|^3)`
    CubeExp,
    /// `alpha N(0, 1) + (1 - alpha) N(0, sigma^2)`
    GaussMixture { alpha: f64, sigma: f64 },
}

/// Draws `n` i.i.d. samples of `kind`.
pub fn sample_density<R: Rng + ?Sized>(kind: DensityKind, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match kind {
        DensityKind::Laplace => Ok((0..n)
            .map(|_| {
                let mut r: f64 = rng.random();
                while r == 0.0 {
                    r = rng.random();
                }
                let u = r - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect()),
        DensityKind::Gaussian => Ok((0..n).map(|_| StandardNormal.sample(rng)).collect()),
        DensityKind::CubeExp => {
            let budget = (1000.0 * (n as f64 / CUBE_EXP_ACCEPTANCE).max(1.0)).ceil() as u64;
            let mut out = Vec::with_capacity(n);
            let mut draws = 0u64;
            while out.len() < n {
                if draws >= budget {
                    return Err(IcaError::SamplerStall {
                        draws,
                        accepted: out.len(),
                    });
                }
                draws += 1;
                let x: f64 = StandardNormal.sample(rng);
                let log_ratio = -x.abs().powi(3) + 0.5 * x * x - CUBE_EXP_LOG_ENVELOPE;
                let u: f64 = rng.random();
                if u.ln() < log_ratio {
                    out.push(x);
                }
            }
            Ok(out)
        }
        DensityKind::GaussMixture { alpha, sigma } => {
            if !(0.0..=1.0).contains(&alpha) || !(sigma > 0.0) {
                return Err(IcaError::InvalidConfig(format!(
                    "mixture needs alpha in [0, 1] and sigma > 0, got alpha = {alpha}, sigma = {sigma}"
                )));
            }
            Ok((0..n)
                .map(|_| {
                    let wide = rng.random::<f64>() < alpha;
                    let z: f64 = StandardNormal.sample(rng);
                    if wide {
                        z
                    } else {
                        sigma * z
                    }
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    /// N = 50, T = 10000, all sources Laplace.
    A,
    /// N = 15, T = 10000: a third Laplace, a third Gaussian, a third cube-exp.
    B,
    /// N = 40, T = 5000: Gaussian scale mixtures from strongly to not at all
    /// super-Gaussian.
    C,
}

impl Experiment {
    pub fn default_size(self) -> (usize, usize) {
        match self {
            Experiment::A => (50, 10_000),
            Experiment::B => (15, 10_000),
            Experiment::C => (40, 5_000),
        }
    }

    /// Density of each of the `n` rows.
    pub fn densities(self, n: usize) -> Vec<DensityKind> {
        match self {
            Experiment::A => vec![DensityKind::Laplace; n],
            Experiment::B => {
                let laplace = n.div_ceil(3);
                let gauss = (n + 1) / 3;
                (0..n)
                    .map(|i| {
                        if i < laplace {
                            DensityKind::Laplace
                        } else if i < laplace + gauss {
                            DensityKind::Gaussian
                        } else {
                            DensityKind::CubeExp
                        }
                    })
                    .collect()
            }
            Experiment::C => (0..n)
                .map(|i| {
                    let alpha = if n == 1 { 1.0 } else { 0.5 + 0.5 * i as f64 / (n - 1) as f64 };
                    DensityKind::GaussMixture { alpha, sigma: 0.1 }
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Experiment::A),
            "B" | "b" => Ok(Experiment::B),
            "C" | "c" => Ok(Experiment::C),
            other => Err(format!("unknown experiment '{other}', expected A, B or C")),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub sources: Array2<f64>,
    pub mixing: Array2<f64>,
    pub observed: Array2<f64>,
    pub experiment: Experiment,
    pub seed: u64,
    /// Number of mixing matrices drawn before one passed the determinant check.
    pub mixing_draws: usize,
}

impl SyntheticProblem {
    pub fn n(&self) -> usize {
        self.sources.nrows()
    }

    pub fn t(&self) -> usize {
        self.sources.ncols()
    }

    /// 2-norm condition number of the mixing matrix.
    pub fn mixing_condition(&self) -> f64 {
        condition_number(&self.mixing)
    }
}

pub fn condition_number(a: &Array2<f64>) -> f64 {
    let sv = to_nalgebra(a).singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Generates experiment `id` with the given seed; `n`/`t` override the
/// experiment's default size.
pub fn gen_experiment(
    id: Experiment,
    seed: u64,
    n: Option<usize>,
    t: Option<usize>,
) -> Result<SyntheticProblem> {
    let (dn, dt) = id.default_size();
    let (n, t) = (n.unwrap_or(dn), t.unwrap_or(dt));
    if n < 2 || t < n {
        return Err(IcaError::InvalidConfig(format!(
            "experiment size must satisfy N >= 2 and T >= N, got N = {n}, T = {t}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sources = Array2::zeros((n, t));
    for (mut row, kind) in sources.axis_iter_mut(Axis(0)).zip(id.densities(n)) {
        let values = sample_density(kind, t, &mut rng)?;
        row.iter_mut().zip(values).for_each(|(r, v)| *r = v);
    }
    let (mixing, mixing_draws) = draw_mixing(n, &mut rng);
    let observed = mixing.dot(&sources);
    Ok(SyntheticProblem {
        sources,
        mixing,
        observed,
        experiment: id,
        seed,
        mixing_draws,
    })
}

/// Standard normal N x N matrix, redrawn while `|det| < MIN_MIXING_DET`.
pub fn draw_mixing<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Array2<f64>, usize) {
    let mut draws = 0;
    loop {
        draws += 1;
        let a = Array2::from_shape_simple_fn((n, n), || StandardNormal.sample(rng));
        if log_abs_det(a.view()) >= MIN_MIXING_DET.ln() {
            return (a, draws);
        }
    }
}

/// Distance of `P = W A` from the set of scaled permutation matrices.
///
/// With `P^` the rows of `|P|` scaled to unit maximum, returns
/// `(1 / 2N) [sum_i (sum_j P^_ij - max_j P^_ij) / max_j P^_ij
///          + sum_j (sum_i P^_ij - max_i P^_ij) / max_i P^_ij]`,
/// which is zero exactly for scaled permutations.
pub fn recovery_index(w: &Array2<f64>, a: &Array2<f64>) -> f64 {
    let mut p = w.dot(a).mapv(f64::abs);
    let n = p.nrows();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            row.mapv_inplace(|v| v / m);
        }
    }
    let term = |lines: ndarray::iter::Lanes<'_, f64, ndarray::Ix1>| -> f64 {
        lines
            .into_iter()
            .map(|l| {
                let m = l.iter().cloned().fold(0.0, f64::max);
                if m > 0.0 {
                    (l.sum() - m) / m
                } else {
                    0.0
                }
            })
            .sum()
    };
    (term(p.rows()) + term(p.columns())) / (2 * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::invert;
    use ndarray::array;

    fn moments(v: &[f64]) -> (f64, f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        (m, m2, m4)
    }

    #[test]
    fn laplace_tail_probability() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let n = 100_000;
        let v = sample_density(DensityKind::Laplace, n, &mut rng).unwrap();
        let p = (-1.0f64).exp();
        let emp = v.iter().filter(|x| x.abs() > 1.0).count() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((emp - p).abs() < 3.0 * se, "{emp} vs {p}");
    }

    /// Second moment of the normalized density exp(-|x|^3) by trapezoidal
    /// quadrature on [-8, 8].
    fn cube_exp_second_moment() -> f64 {
        let (lo, hi, steps) = (-8.0, 8.0, 160_000);
        let h = (hi - lo) / steps as f64;
        let (mut z, mut m2) = (0.0, 0.0);
        for k in 0..=steps {
            let x = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            let f = (-x.abs().powi(3)).exp();
            z += w * f;
            m2 += w * f * x * x;
        }
        m2 / z
    }

    #[test]
    fn cube_exp_second_moment_matches_quadrature() {
        let target = cube_exp_second_moment();
        // Closed form Gamma(1) / Gamma(1/3) = 0.37328...
        assert!((target - 0.373_283).abs() < 1e-5);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 100_000;
        let v = sample_density(DensityKind::CubeExp, n, &mut rng).unwrap();
        let m2 = v.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let var_x2 = v.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / n as f64;
        let se = (var_x2 / n as f64).sqrt();
        assert!((m2 - target).abs() < 3.0 * se, "{m2} vs {target}");
    }

    #[test]
    fn degenerate_mixture_is_standard_normal() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 20_000;
        let mut v = sample_density(DensityKind::GaussMixture { alpha: 1.0, sigma: 0.1 }, n, &mut rng).unwrap();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "KS {d} vs {crit}");
    }

    /// `erf(x) = 2/sqrt(pi) exp(-x^2) sum_k 2^k x^(2k+1) / (2k+1)!!`
    fn erf(x: f64) -> f64 {
        if x.abs() > 6.0 {
            return x.signum();
        }
        let mut sum = x;
        let mut term = x;
        let mut k = 0.0;
        while term.abs() > 1e-17 * sum.abs() {
            k += 1.0;
            term *= 2.0 * x * x / (2.0 * k + 1.0);
            sum += term;
        }
        2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
    }

    #[test]
    fn erf_reference_values() {
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-14);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-14);
    }

    #[test]
    fn mixture_rejects_bad_parameters() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert!(sample_density(DensityKind::GaussMixture { alpha: 1.5, sigma: 0.1 }, 3, &mut rng).is_err());
        assert!(sample_density(DensityKind::GaussMixture { alpha: 0.5, sigma: 0.0 }, 3, &mut rng).is_err());
    }

    #[test]
    fn experiment_a_sources_have_laplace_variance() {
        let p = gen_experiment(Experiment::A, 7, Some(5), Some(20_000)).unwrap();
        for row in p.sources.rows() {
            let (_, var, m4) = moments(row.as_slice().unwrap());
            let se = ((m4 - var * var) / row.len() as f64).sqrt();
            assert!((var - 2.0).abs() < 3.0 * se, "{var}");
        }
    }

    #[test]
    fn experiment_shapes_and_densities() {
        assert_eq!(Experiment::A.default_size(), (50, 10_000));
        assert_eq!(Experiment::B.default_size(), (15, 10_000));
        assert_eq!(Experiment::C.default_size(), (40, 5_000));
        let b = Experiment::B.densities(15);
        assert!(b[..5].iter().all(|d| *d == DensityKind::Laplace));
        assert!(b[5..10].iter().all(|d| *d == DensityKind::Gaussian));
        assert!(b[10..].iter().all(|d| *d == DensityKind::CubeExp));
        let c = Experiment::C.densities(40);
        assert_eq!(c[0], DensityKind::GaussMixture { alpha: 0.5, sigma: 0.1 });
        assert_eq!(c[39], DensityKind::GaussMixture { alpha: 1.0, sigma: 0.1 });
    }

    #[test]
    fn experiment_c_last_row_is_gaussian() {
        let p = gen_experiment(Experiment::C, 11, Some(6), Some(40_000)).unwrap();
        let row = p.sources.row(5);
        let (_, var, m4) = moments(row.as_slice().unwrap());
        let kurt = m4 / (var * var);
        let se = (24.0 / row.len() as f64).sqrt();
        assert!((kurt - 3.0).abs() < 3.0 * se, "kurtosis {kurt}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_experiment(Experiment::B, 5, None, Some(500)).unwrap();
        let b = gen_experiment(Experiment::B, 5, None, Some(500)).unwrap();
        assert_eq!(a, b);
        assert!(a.observed.iter().zip(b.observed.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = gen_experiment(Experiment::B, 6, None, Some(500)).unwrap();
        assert_ne!(a.observed, c.observed);
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        assert!(gen_experiment(Experiment::A, 0, Some(1), Some(10)).is_err());
        assert!(gen_experiment(Experiment::A, 0, Some(10), Some(5)).is_err());
    }

    #[test]
    fn mixing_redraws_are_rare() {
        let mut worst = 0;
        for seed in 0..10_000u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (a, draws) = draw_mixing(4, &mut rng);
            assert!(log_abs_det(a.view()) >= MIN_MIXING_DET.ln());
            worst = worst.max(draws);
        }
        assert!(worst <= 10);
    }

    #[test]
    fn recovery_index_of_exact_inverse_is_zero() {
        let p = gen_experiment(Experiment::A, 3, Some(6), Some(10)).unwrap();
        let w = invert(&p.mixing).unwrap();
        assert!(recovery_index(&w, &p.mixing) < 1e-12);
        assert!(p.mixing_condition() >= 1.0);
    }

    #[test]
    fn recovery_index_ignores_scale_and_permutation() {
        let p = gen_experiment(Experiment::A, 4, Some(4), Some(10)).unwrap();
        let inv = invert(&p.mixing).unwrap();
        let perm = array![[0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0]];
        let d = Array2::from_diag(&array![2.0, -0.5, 3.0, 1e-3]);
        let w = d.dot(&perm).dot(&inv);
        assert!(recovery_index(&w, &p.mixing) < 1e-10);
    }

    #[test]
    fn recovery_index_of_all_ones_is_one() {
        let ones = Array2::from_elem((2, 2), 1.0);
        assert_eq!(recovery_index(&ones, &Array2::eye(2)), 1.0);
    }
}
