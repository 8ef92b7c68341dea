//! Preconditioned L-BFGS for maximum-likelihood ICA (Picard).
//!
//! Each iteration computes the relative gradient and a block-diagonal
//! Hessian approximation of the current sources, regularizes it, and uses it
//! as the initial inverse Hessian of the L-BFGS two-loop recursion. Steps are
//! relative updates `W <- (I + alpha p) W` chosen by backtracking; when
//! backtracking fails the solver descends along the gradient and clears its
//! memory.
//!
//! The same engine drives the simple quasi-Newton method (no memory) and
//! vanilla L-BFGS (scaled identity seed); see [`Variant`].

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::curvature::{approx_from, block_solve, regularize, ApproxKind, BlockDiagApprox};
use crate::error::{IcaError, Result};
use crate::linalg::{frobenius, identity_plus, inf_norm, inner, log_abs_det_identity_plus};
use crate::model::{density_change, loss, relative_gradient_from, ScoreMaps, UnmixingState};
use crate::trace::{ConvergenceTrace, Stopwatch, TraceRecord};

/// Pairs with `<s|y> <= CURVATURE_FLOOR * |s| |y|` are not stored.
pub const CURVATURE_FLOOR: f64 = 1e-10;

/// Iterations between checks that the incrementally updated sources still
/// equal `W X`.
pub const REFRESH_PERIOD: usize = 50;
const REFRESH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// L-BFGS memory size.
    pub memory: usize,
    /// Maximum backtracking candidates before falling back to the gradient.
    pub n_ls: usize,
    pub lambda_min: f64,
    /// Stop once `max_ij |G_ij| <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub precond: ApproxKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            memory: 7,
            n_ls: 10,
            lambda_min: 1e-2,
            tol: 1e-8,
            max_iter: 500,
            precond: ApproxKind::H2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ls < 1 {
            return Err(IcaError::InvalidConfig("n_ls must be at least 1".into()));
        }
        if !(self.lambda_min > 0.0) {
            return Err(IcaError::InvalidConfig("lambda_min must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(IcaError::InvalidConfig("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CurvaturePair {
    pub s: Array2<f64>,
    pub y: Array2<f64>,
    pub rho: f64,
}

/// The last `capacity` step/gradient-change pairs, oldest first.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<CurvaturePair>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    /// Stores `(s, y)` unless it fails the curvature floor. Returns whether
    /// the pair was kept.
    pub fn push(&mut self, s: Array2<f64>, y: Array2<f64>) -> bool {
        if self.capacity == 0 {
            return false;
        }
        let sy = inner(&s, &y);
        if !(sy > CURVATURE_FLOOR * frobenius(&s) * frobenius(&y)) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CurvaturePair { s, y, rho: 1.0 / sy });
        true
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    pub fn newest(&self) -> Option<&CurvaturePair> {
        self.pairs.back()
    }
}

/// Initial inverse-Hessian guess at the middle of the two-loop recursion.
#[derive(Debug, Clone, Copy)]
pub enum InitialHessian<'a> {
    /// Solve with a regularized block-diagonal approximation.
    Approx(&'a BlockDiagApprox),
    /// Multiply by `gamma`.
    ScaledIdentity(f64),
}

/// L-BFGS two-loop recursion on N x N matrices with the Frobenius inner
/// product, returning the search direction for gradient `g`.
pub fn two_loop_direction(
    g: &Array2<f64>,
    memory: &LbfgsMemory,
    seed: InitialHessian<'_>,
) -> Result<Array2<f64>> {
    let mut q = -g;
    let mut coeffs = Vec::with_capacity(memory.len());
    for pair in memory.pairs().rev() {
        let a = pair.rho * inner(&pair.s, &q);
        q.scaled_add(-a, &pair.y);
        coeffs.push(a);
    }
    let mut r = match seed {
        InitialHessian::Approx(approx) => block_solve(approx, &q)?,
        InitialHessian::ScaledIdentity(gamma) => q * gamma,
    };
    for (pair, a) in memory.pairs().zip(coeffs.into_iter().rev()) {
        let beta = pair.rho * inner(&pair.y, &r);
        r.scaled_add(a - beta, &pair.s);
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub w: Array2<f64>,
    pub y: Array2<f64>,
    pub loss: f64,
    pub tries: usize,
    pub success: bool,
}

/// Tries `alpha = 1, 1/2, 1/4, ...` and accepts the first step that strictly
/// decreases the loss, for at most `n_ls` candidates. Non-finite candidate
/// losses count as failures. On failure the returned state is the input.
pub fn backtracking_line_search(
    w: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    p: &Array2<f64>,
    loss0: f64,
    n_ls: usize,
) -> LineSearchOutcome {
    let py = p.dot(&y);
    let mut alpha = 1.0;
    for tries in 1..=n_ls {
        let dy = &py * alpha;
        let change = -log_abs_det_identity_plus(&(p * alpha)) + density_change(y, dy.view());
        if change.is_finite() && change < 0.0 {
            let w_new = identity_plus(alpha, p).dot(w);
            return LineSearchOutcome {
                alpha,
                w: w_new,
                y: &y + &dy,
                loss: loss0 + change,
                tries,
                success: true,
            };
        }
        alpha *= 0.5;
    }
    LineSearchOutcome {
        alpha: 0.0,
        w: w.clone(),
        y: y.to_owned(),
        loss: loss0,
        tries: n_ls,
        success: false,
    }
}

/// How the search direction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// L-BFGS seeded with the regularized approximation.
    Picard(ApproxKind),
    /// `-H~^-1 G` with the regularized approximation, no memory.
    SimpleQuasiNewton(ApproxKind),
    /// L-BFGS seeded with `gamma I`, `gamma = <s|y> / <y|y>` of the newest pair.
    VanillaLbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// Backtracking failed even along the gradient.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub w: Array2<f64>,
    pub y: Array2<f64>,
    pub trace: ConvergenceTrace,
    pub status: SolveStatus,
}

/// Step-by-step quasi-Newton solver. [`picard_solve`] runs it to completion;
/// stepping manually exposes intermediate directions and memory.
pub struct QuasiNewtonSolver<'x> {
    x: ArrayView2<'x, f64>,
    config: SolverConfig,
    variant: Variant,
    state: UnmixingState,
    memory: LbfgsMemory,
    /// Step `s` and gradient of the previous iteration, awaiting the next
    /// gradient to form a curvature pair.
    pending: Option<(Array2<f64>, Array2<f64>)>,
    iter: usize,
    clock: Stopwatch,
    trace: ConvergenceTrace,
    last_direction: Option<Array2<f64>>,
    last_alpha: Option<f64>,
    status: Option<SolveStatus>,
}

impl<'x> QuasiNewtonSolver<'x> {
    pub fn new(
        x: ArrayView2<'x, f64>,
        w0: Array2<f64>,
        config: SolverConfig,
        variant: Variant,
    ) -> Result<Self> {
        config.validate()?;
        let clock = Stopwatch::start();
        let state = UnmixingState::new(w0, x)?;
        let memory_size = match variant {
            Variant::SimpleQuasiNewton(_) => 0,
            _ => config.memory,
        };
        Ok(Self {
            x,
            memory: LbfgsMemory::new(memory_size),
            config,
            variant,
            state,
            pending: None,
            iter: 0,
            clock,
            trace: ConvergenceTrace::default(),
            last_direction: None,
            last_alpha: None,
            status: None,
        })
    }

    pub fn memory(&self) -> &LbfgsMemory {
        &self.memory
    }

    pub fn state(&self) -> &UnmixingState {
        &self.state
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    /// Direction computed by the latest iteration, before any fallback.
    pub fn last_direction(&self) -> Option<&Array2<f64>> {
        self.last_direction.as_ref()
    }

    /// Accepted step length of the latest iteration.
    pub fn last_alpha(&self) -> Option<f64> {
        self.last_alpha
    }

    pub fn status(&self) -> Option<SolveStatus> {
        self.status
    }

    fn diverged(&self) -> IcaError {
        IcaError::Diverged {
            iteration: self.iter,
            trace: self.trace.clone(),
        }
    }

    /// Runs one iteration. Returns the final status once the solver stops.
    pub fn step(&mut self) -> Result<Option<SolveStatus>> {
        if let Some(status) = self.status {
            return Ok(Some(status));
        }
        let y = self.state.y.view();
        let maps = ScoreMaps::new(y);
        let g = relative_gradient_from(&maps.psi, y);
        let mut products = 1;
        let grad_inf = inf_norm(&g);
        if !grad_inf.is_finite() || !self.state.loss.is_finite() {
            return Err(self.diverged());
        }
        if let Some((s, g_prev)) = self.pending.take() {
            self.memory.push(s, &g - &g_prev);
        }
        let precond = match self.variant {
            Variant::Picard(kind) | Variant::SimpleQuasiNewton(kind) => {
                if kind == ApproxKind::H2 {
                    products += 1;
                }
                Some(regularize(&approx_from(kind, &maps.psi_deriv, y), self.config.lambda_min))
            }
            Variant::VanillaLbfgs => None,
        };
        let mut record = TraceRecord::new(self.iter, self.clock.elapsed_secs(), grad_inf, self.state.loss);
        record.n2t_products = products;

        let stop = if grad_inf <= self.config.tol {
            Some(SolveStatus::Converged)
        } else if self.iter >= self.config.max_iter {
            Some(SolveStatus::MaxIter)
        } else {
            None
        };
        if let Some(status) = stop {
            self.trace.push(record);
            self.state.gradient = g;
            self.status = Some(status);
            return Ok(Some(status));
        }

        let direction = match (self.variant, &precond) {
            (Variant::SimpleQuasiNewton(_), Some(h)) => block_solve(h, &-&g)?,
            (Variant::Picard(_), Some(h)) => {
                two_loop_direction(&g, &self.memory, InitialHessian::Approx(h))?
            }
            _ => {
                let gamma = self
                    .memory
                    .newest()
                    .map(|p| inner(&p.s, &p.y) / inner(&p.y, &p.y))
                    .unwrap_or(1.0);
                two_loop_direction(&g, &self.memory, InitialHessian::ScaledIdentity(gamma))?
            }
        };
        let mut p = direction.clone();
        let mut ls = backtracking_line_search(
            &self.state.w,
            self.state.y.view(),
            &p,
            self.state.loss,
            self.config.n_ls,
        );
        record.ls_tries = ls.tries;
        if !ls.success {
            record.fallback = true;
            self.memory.clear();
            p = -&g;
            ls = backtracking_line_search(
                &self.state.w,
                self.state.y.view(),
                &p,
                self.state.loss,
                self.config.n_ls,
            );
            record.ls_tries += ls.tries;
        }
        self.trace.push(record);
        self.last_direction = Some(direction);

        if !ls.success {
            self.last_alpha = None;
            self.state.gradient = g;
            self.status = Some(SolveStatus::Stalled);
            return Ok(Some(SolveStatus::Stalled));
        }
        self.last_alpha = Some(ls.alpha);
        self.pending = Some((p * ls.alpha, g.clone()));
        self.state.w = ls.w;
        self.state.y = ls.y;
        self.state.loss = ls.loss;
        self.state.gradient = g;
        self.iter += 1;

        if self.iter.is_multiple_of(REFRESH_PERIOD) && !self.state.is_consistent(self.x, REFRESH_TOL) {
            self.state.y = self.state.w.dot(&self.x);
            self.state.loss = loss(&self.state.w, self.state.y.view()).map_err(|_| self.diverged())?;
        }
        if !self.state.w.iter().all(|v| v.is_finite()) {
            return Err(self.diverged());
        }
        Ok(None)
    }

    /// Steps until a stopping criterion is met.
    pub fn run(mut self) -> Result<SolveResult> {
        loop {
            if let Some(status) = self.step()? {
                return Ok(SolveResult {
                    w: self.state.w,
                    y: self.state.y,
                    trace: self.trace,
                    status,
                });
            }
        }
    }
}

/// Picard: L-BFGS preconditioned by the regularized approximation chosen in
/// `config.precond`.
pub fn picard_solve(
    x: ArrayView2<'_, f64>,
    w0: Array2<f64>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    QuasiNewtonSolver::new(x, w0, config.clone(), Variant::Picard(config.precond))?.run()
}
