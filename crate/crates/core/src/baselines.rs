//! Comparison solvers sharing the likelihood, curvature and line-search
//! primitives with Picard: oracle gradient descent, Infomax stochastic
//! gradient, simple quasi-Newton, truncated Newton and vanilla L-BFGS.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    approx_h2_from, block_solve, full_hessian_from, hessian_free_product_from, regularize,
    BlockDiagApprox, DEFAULT_ORACLE_CAP,
};
use crate::error::{IcaError, Result};
use crate::linalg::{frobenius, identity_plus, inf_norm, inner};
use crate::model::{loss, relative_gradient, relative_gradient_from, ScoreMaps, UnmixingState};
use crate::picard::{
    backtracking_line_search, QuasiNewtonSolver, SolveResult, SolveStatus, SolverConfig, Variant,
};
use crate::trace::{ConvergenceTrace, Stopwatch, TraceRecord};

fn diverged(iteration: usize, trace: &ConvergenceTrace) -> IcaError {
    IcaError::Diverged {
        iteration,
        trace: trace.clone(),
    }
}

/// `-H~^-1 G` with the approximation in `config.precond`, no memory.
pub fn simple_qn_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    QuasiNewtonSolver::new(x, w0, config.clone(), Variant::SimpleQuasiNewton(config.precond))?.run()
}

/// L-BFGS with the scaled-identity initial Hessian.
pub fn vanilla_lbfgs_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    QuasiNewtonSolver::new(x, w0, config.clone(), Variant::VanillaLbfgs)?.run()
}

/// Upper end of the step-length bracket of the oracle line search.
pub const ORACLE_MAX_STEP: f64 = 4.0;
/// Relative width at which the golden-section search stops.
pub const ORACLE_REL_TOL: f64 = 1e-3;

/// Approximate minimizer of `phi` on `(0, ORACLE_MAX_STEP]`.
///
/// A geometric scan `4, 2, 1, ...` brackets the best step, then golden-section
/// search narrows the bracket to `ORACLE_REL_TOL` relative width. Non-finite
/// values are treated as `+inf`. Returns the step, its value and the number
/// of evaluations.
pub fn oracle_step<F: FnMut(f64) -> f64>(mut phi: F) -> (f64, f64, usize) {
    let mut eval = |a: f64| {
        let v = phi(a);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let scan: Vec<(f64, f64)> = (0..40)
        .map(|k| {
            let a = ORACLE_MAX_STEP * 0.5f64.powi(k);
            evals += 1;
            (a, eval(a))
        })
        .collect();
    let best = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap();
    let hi = scan[best.saturating_sub(1)].0;
    let lo = scan.get(best + 1).map_or(0.0, |s| s.0);
    let (mut a, mut b) = (lo, hi);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    evals += 2;
    while b - a > ORACLE_REL_TOL * 0.5 * (a + b) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d);
        }
        evals += 1;
    }
    let mut candidates = [(c, fc), (d, fd), scan[best]];
    candidates.sort_by(|x, y| x.1.total_cmp(&y.1));
    (candidates[0].0, candidates[0].1, evals)
}

/// Relative gradient descent `W <- (I - alpha G) W` with the step chosen by
/// [`oracle_step`]. Time spent in the oracle search is not reported.
pub fn gradient_descent_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let mut clock = Stopwatch::start();
    let mut state = UnmixingState::new(w0, x)?;
    let mut trace = ConvergenceTrace::default();
    let mut iter = 0;
    loop {
        let g = relative_gradient(state.y.view());
        let grad_inf = inf_norm(&g);
        if !grad_inf.is_finite() {
            return Err(diverged(iter, &trace));
        }
        let mut record = TraceRecord::new(iter, clock.elapsed_secs(), grad_inf, state.loss);
        record.n2t_products = 1;
        let status = if grad_inf <= config.tol {
            Some(SolveStatus::Converged)
        } else if iter >= config.max_iter {
            Some(SolveStatus::MaxIter)
        } else {
            None
        };
        if let Some(status) = status {
            trace.push(record);
            state.gradient = g;
            return Ok(SolveResult { w: state.w, y: state.y, trace, status });
        }
        clock.pause();
        let (alpha, value, evals) = oracle_step(|a| {
            let m = identity_plus(-a, &g);
            loss(&m.dot(&state.w), m.dot(&state.y).view()).unwrap_or(f64::INFINITY)
        });
        clock.resume();
        record.ls_tries = evals;
        trace.push(record);
        if !(value < state.loss) {
            state.gradient = g;
            return Ok(SolveResult { w: state.w, y: state.y, trace, status: SolveStatus::Stalled });
        }
        let m = identity_plus(-alpha, &g);
        state.w = m.dot(&state.w);
        state.y = m.dot(&state.y);
        state.loss = value;
        state.gradient = g;
        iter += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfomaxConfig {
    /// Mini-batch size T'.
    pub batch_size: usize,
    pub alpha0: f64,
    /// Step-size annealing factor in (0, 1).
    pub anneal: f64,
    /// Angle in radians between consecutive batch gradients above which the
    /// step size is annealed.
    pub angle_threshold: f64,
    pub max_passes: usize,
    pub seed: u64,
    /// Stop once the full-data gradient satisfies `max_ij |G_ij| <= tol`.
    pub tol: f64,
}

impl Default for InfomaxConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            alpha0: 0.01,
            anneal: 0.9,
            angle_threshold: 60f64.to_radians(),
            max_passes: 500,
            seed: 0,
            tol: 1e-8,
        }
    }
}

impl InfomaxConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > t {
            return Err(IcaError::InvalidConfig(format!(
                "batch size must be in 1..={t}, got {}",
                self.batch_size
            )));
        }
        if !(self.alpha0 > 0.0) {
            return Err(IcaError::InvalidConfig("alpha0 must be positive".into()));
        }
        if !(self.anneal > 0.0 && self.anneal < 1.0) {
            return Err(IcaError::InvalidConfig("anneal factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Angle in radians between two matrices under the Frobenius product.
fn angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let denom = frobenius(a) * frobenius(b);
    if denom == 0.0 {
        return 0.0;
    }
    (inner(a, b) / denom).clamp(-1.0, 1.0).acos()
}

/// Infomax: stochastic relative gradient steps on shuffled mini-batches.
/// One trace record per pass over the data, with the full-data gradient.
pub fn infomax_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &InfomaxConfig,
) -> Result<SolveResult> {
    let t = x.ncols();
    config.validate(t)?;
    let clock = Stopwatch::start();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut w = w0;
    let mut alpha = config.alpha0;
    let mut previous: Option<Array2<f64>> = None;
    let mut order: Vec<usize> = (0..t).collect();
    let mut trace = ConvergenceTrace::default();
    for pass in 0.. {
        let y = w.dot(&x);
        let g = relative_gradient(y.view());
        let grad_inf = inf_norm(&g);
        let l = loss(&w, y.view()).map_err(|_| diverged(pass, &trace))?;
        if !grad_inf.is_finite() {
            return Err(diverged(pass, &trace));
        }
        let mut record = TraceRecord::new(pass, clock.elapsed_secs(), grad_inf, l);
        // The batch gradients of one pass add up to one full N^2 T product.
        record.n2t_products = usize::from(pass > 0);
        trace.push(record);
        let status = if grad_inf <= config.tol {
            Some(SolveStatus::Converged)
        } else if pass >= config.max_passes {
            Some(SolveStatus::MaxIter)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(SolveResult { w, y, trace, status });
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(1), batch);
            let yb = w.dot(&xb);
            let gb = relative_gradient(yb.view());
            w = identity_plus(-alpha, &gb).dot(&w);
            if let Some(prev) = &previous {
                if angle(prev, &gb) > config.angle_threshold {
                    alpha *= config.anneal;
                }
            }
            previous = Some(gb);
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(diverged(pass, &trace));
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TNewtonConfig {
    /// CG stops at relative residual `|r| / |G| <= cg_tol`.
    pub cg_tol: f64,
    /// Defaults to `10 N` when `None`.
    pub cg_max_iter: Option<usize>,
    /// Precondition CG with the regularized H~2 approximation.
    pub use_precond: bool,
    pub oracle_cap: usize,
}

impl Default for TNewtonConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-2,
            cg_max_iter: None,
            use_precond: true,
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Array2<f64>,
    pub iterations: usize,
    pub breakdown: bool,
}

/// Preconditioned conjugate gradient for `A p = rhs`, where `apply` computes
/// `A M` and `precond` (if any) approximates `A`. Stops when
/// `|r| <= tol * |rhs|` or after `max_iter` products. On a non-positive
/// curvature direction it stops and returns the current iterate.
pub fn conjugate_gradient<F>(
    mut apply: F,
    rhs: &Array2<f64>,
    precond: Option<&BlockDiagApprox>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: FnMut(&Array2<f64>) -> Array2<f64>,
{
    let mut p = Array2::zeros(rhs.raw_dim());
    let target = tol * frobenius(rhs);
    let mut r = rhs.clone();
    let solve = |r: &Array2<f64>| -> Result<Array2<f64>> {
        match precond {
            Some(h) => block_solve(h, r),
            None => Ok(r.clone()),
        }
    };
    let mut z = solve(&r)?;
    let mut d = z.clone();
    let mut rz = inner(&r, &z);
    let mut iterations = 0;
    while frobenius(&r) > target && iterations < max_iter {
        let ad = apply(&d);
        iterations += 1;
        let curvature = inner(&d, &ad);
        if !(curvature > 0.0) {
            return Ok(CgOutcome { solution: p, iterations, breakdown: true });
        }
        let step = rz / curvature;
        p.scaled_add(step, &d);
        r.scaled_add(-step, &ad);
        z = solve(&r)?;
        let rz_new = inner(&r, &z);
        d = &z + &(d * (rz_new / rz));
        rz = rz_new;
    }
    Ok(CgOutcome { solution: p, iterations, breakdown: false })
}

/// Truncated Newton: `(H + lambda I) p = -G` solved approximately by
/// (preconditioned) CG with Hessian-free products. The shift `lambda` comes
/// from the smallest eigenvalue of the dense Hessian, whose cost is excluded
/// from reported time.
pub fn truncated_newton_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &SolverConfig,
    tn: &TNewtonConfig,
) -> Result<SolveResult> {
    config.validate()?;
    if !(tn.cg_tol > 0.0) {
        return Err(IcaError::InvalidConfig("cg_tol must be positive".into()));
    }
    let n = x.nrows();
    if n > tn.oracle_cap {
        return Err(IcaError::OracleCapExceeded { n, cap: tn.oracle_cap });
    }
    let cg_max_iter = tn.cg_max_iter.unwrap_or(10 * n);
    let mut clock = Stopwatch::start();
    let mut state = UnmixingState::new(w0, x)?;
    let mut trace = ConvergenceTrace::default();
    let mut iter = 0;
    loop {
        let y = state.y.view();
        let maps = ScoreMaps::new(y);
        let g = relative_gradient_from(&maps.psi, y);
        let mut products = 1;
        let grad_inf = inf_norm(&g);
        if !grad_inf.is_finite() {
            return Err(diverged(iter, &trace));
        }
        let precond = if tn.use_precond {
            products += 1;
            Some(regularize(&approx_h2_from(&maps.psi_deriv, y), config.lambda_min))
        } else {
            None
        };
        let mut record = TraceRecord::new(iter, clock.elapsed_secs(), grad_inf, state.loss);
        let status = if grad_inf <= config.tol {
            Some(SolveStatus::Converged)
        } else if iter >= config.max_iter {
            Some(SolveStatus::MaxIter)
        } else {
            None
        };
        if let Some(status) = status {
            record.n2t_products = products;
            record.n_cg = Some(0);
            trace.push(record);
            state.gradient = g;
            return Ok(SolveResult { w: state.w, y: state.y, trace, status });
        }

        clock.pause();
        let shift = full_hessian_from(&maps.psi_deriv, y, tn.oracle_cap)?.newton_shift();
        clock.resume();

        let cg = conjugate_gradient(
            |m| {
                let mut hm = hessian_free_product_from(&maps.psi_deriv, y, m);
                hm.scaled_add(shift, m);
                hm
            },
            &-&g,
            precond.as_ref(),
            tn.cg_tol,
            cg_max_iter,
        )?;
        products += cg.iterations;
        record.n2t_products = products;
        record.n_cg = Some(cg.iterations);
        record.cg_breakdown = cg.breakdown;

        let mut ls = backtracking_line_search(&state.w, y, &cg.solution, state.loss, config.n_ls);
        record.ls_tries = ls.tries;
        if !ls.success {
            record.fallback = true;
            ls = backtracking_line_search(&state.w, y, &-&g, state.loss, config.n_ls);
            record.ls_tries += ls.tries;
        }
        trace.push(record);
        if !ls.success {
            state.gradient = g;
            return Ok(SolveResult { w: state.w, y: state.y, trace, status: SolveStatus::Stalled });
        }
        state.w = ls.w;
        state.y = ls.y;
        state.loss = ls.loss;
        state.gradient = g;
        iter += 1;
    }
}
