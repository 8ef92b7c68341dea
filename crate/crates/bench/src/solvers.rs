//! Solver identifiers and dispatch.

use std::fmt;
use std::str::FromStr;

use ica_core::baselines::{
    gradient_descent_solve, infomax_solve, simple_qn_solve, truncated_newton_solve, vanilla_lbfgs_solve,
    InfomaxConfig, TNewtonConfig,
};
use ica_core::curvature::ApproxKind;
use ica_core::picard::{picard_solve, SolveResult, SolverConfig};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    PicardH1,
    PicardH2,
    Lbfgs,
    SqnH1,
    SqnH2,
    Tnewton,
    GdOracle,
    Infomax,
}

impl SolverId {
    pub const ALL: [SolverId; 8] = [
        SolverId::PicardH1,
        SolverId::PicardH2,
        SolverId::Lbfgs,
        SolverId::SqnH1,
        SolverId::SqnH2,
        SolverId::Tnewton,
        SolverId::GdOracle,
        SolverId::Infomax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverId::PicardH1 => "picard-h1",
            SolverId::PicardH2 => "picard-h2",
            SolverId::Lbfgs => "lbfgs",
            SolverId::SqnH1 => "sqn-h1",
            SolverId::SqnH2 => "sqn-h2",
            SolverId::Tnewton => "tnewton",
            SolverId::GdOracle => "gd-oracle",
            SolverId::Infomax => "infomax",
        }
    }

    /// Approximation implied by the identifier, if it uses one.
    pub fn approx_kind(self) -> Option<ApproxKind> {
        match self {
            SolverId::PicardH1 | SolverId::SqnH1 => Some(ApproxKind::H1),
            SolverId::PicardH2 | SolverId::SqnH2 | SolverId::Tnewton => Some(ApproxKind::H2),
            _ => None,
        }
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SolverId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = SolverId::ALL.iter().map(|id| id.as_str()).collect();
                format!("unknown solver `{s}` (expected one of {})", known.join(", "))
            })
    }
}

/// `--precond` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precond {
    H1,
    H2,
    /// Only meaningful for truncated Newton: plain CG.
    None,
}

impl FromStr for Precond {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(Precond::H1),
            "h2" => Ok(Precond::H2),
            "none" => Ok(Precond::None),
            _ => Err(format!("unknown preconditioner `{s}` (expected h1, h2 or none)")),
        }
    }
}

/// Everything besides the data that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub solver: SolverConfig,
    pub tnewton: TNewtonConfig,
    pub infomax: InfomaxConfig,
    /// Overrides the approximation implied by the solver identifier.
    pub precond: Option<Precond>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            tnewton: TNewtonConfig::default(),
            infomax: InfomaxConfig { max_passes: SolverConfig::default().max_iter, ..InfomaxConfig::default() },
            precond: None,
        }
    }
}

impl SolverSettings {
    /// Checks that the `--precond` override applies to `id`: Picard and
    /// simple quasi-Newton accept `h1`/`h2`, truncated Newton `h2`/`none`.
    pub fn check(&self, id: SolverId) -> Result<(), String> {
        let Some(p) = self.precond else {
            return Ok(());
        };
        let ok = match id {
            SolverId::PicardH1 | SolverId::PicardH2 | SolverId::SqnH1 | SolverId::SqnH2 => p != Precond::None,
            SolverId::Tnewton => p != Precond::H1,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("--precond {} does not apply to {id}", format!("{p:?}").to_lowercase()))
        }
    }

    /// Solver configuration with the approximation resolved for `id`.
    pub fn resolved(&self, id: SolverId) -> (SolverConfig, TNewtonConfig) {
        let mut config = self.solver.clone();
        let mut tn = self.tnewton.clone();
        if let Some(kind) = id.approx_kind() {
            config.precond = kind;
        }
        match (id, self.precond) {
            (SolverId::Tnewton, Some(p)) => tn.use_precond = p != Precond::None,
            (_, Some(Precond::H1)) => config.precond = ApproxKind::H1,
            (_, Some(Precond::H2)) => config.precond = ApproxKind::H2,
            _ => {}
        }
        (config, tn)
    }

    /// Settings as recorded in trace files, restricted to what `id` reads.
    pub fn describe(&self, id: SolverId) -> serde_json::Value {
        let (c, tn) = self.resolved(id);
        let mut v = serde_json::json!({ "tol": c.tol, "max_iter": c.max_iter });
        let obj = v.as_object_mut().unwrap();
        match id {
            SolverId::PicardH1 | SolverId::PicardH2 | SolverId::Lbfgs => {
                obj.insert("m".into(), c.memory.into());
            }
            _ => {}
        }
        match id {
            SolverId::PicardH1 | SolverId::PicardH2 | SolverId::SqnH1 | SolverId::SqnH2 => {
                obj.insert("precond".into(), serde_json::to_value(c.precond).unwrap());
                obj.insert("lambda_min".into(), c.lambda_min.into());
            }
            SolverId::Tnewton => {
                obj.insert("precond".into(), if tn.use_precond { "h2" } else { "none" }.into());
                obj.insert("lambda_min".into(), c.lambda_min.into());
                obj.insert("cg_tol".into(), tn.cg_tol.into());
            }
            SolverId::Infomax => {
                let i = &self.infomax;
                obj.insert("batch_size".into(), i.batch_size.into());
                obj.insert("alpha0".into(), i.alpha0.into());
                obj.insert("anneal".into(), i.anneal.into());
                obj.insert("angle_threshold_deg".into(), i.angle_threshold.to_degrees().into());
                obj.insert("max_passes".into(), i.max_passes.into());
            }
            _ => {}
        }
        if !matches!(id, SolverId::GdOracle | SolverId::Infomax) {
            obj.insert("n_ls".into(), c.n_ls.into());
        }
        v
    }
}

/// Runs `id` from the identity on whitened data `x`. `seed` drives any
/// randomness inside the solver (Infomax batch order).
pub fn run_solver(
    id: SolverId,
    x: ArrayView2<'_, f64>,
    settings: &SolverSettings,
    seed: u64,
) -> ica_core::Result<SolveResult> {
    let w0 = Array2::eye(x.nrows());
    let (config, tn) = settings.resolved(id);
    match id {
        SolverId::PicardH1 | SolverId::PicardH2 => picard_solve(x, w0, &config),
        SolverId::SqnH1 | SolverId::SqnH2 => simple_qn_solve(x, w0, &config),
        SolverId::Lbfgs => vanilla_lbfgs_solve(x, w0, &config),
        SolverId::Tnewton => truncated_newton_solve(x, w0, &config, &tn),
        SolverId::GdOracle => gradient_descent_solve(x, w0, &config),
        SolverId::Infomax => {
            let mut infomax = settings.infomax.clone();
            infomax.seed = seed;
            infomax.tol = config.tol;
            infomax_solve(x, w0, &infomax)
        }
    }
}
