use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use ica_core::datagen::{gen_experiment, Experiment};
use ica_core::prep::DataMatrix;
use icabench::run::{read_summary, RunSpec};
use icabench::svg::render_svg;
use icabench::{compare, run_benchmark, save_matrix, BenchError, BenchReport, DataSource, Precond, SolverId, SolverSettings};

#[derive(Parser)]
#[command(name = "icabench", version, about = "Convergence benchmarks for maximum-likelihood ICA solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic experiment's observed signals to a .csv or .icab file
    Gen {
        #[arg(long)]
        experiment: Experiment,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one solver over repeated problems
    Run {
        #[arg(long)]
        solver: SolverId,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run several solvers on identical per-repeat data
    Compare {
        /// Comma-separated solver ids
        #[arg(long, value_delimiter = ',', required = true)]
        solvers: Vec<SolverId>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Redraw the plot of an existing summary.json
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Matrix file (.csv or .icab), reused by every repeat
    #[arg(long, conflicts_with = "experiment", required_unless_present = "experiment")]
    data: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long, requires = "experiment")]
    n: Option<usize>,
    #[arg(long, requires = "experiment")]
    t: Option<usize>,
    /// Base seed; repeat r uses seed + r
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// h1 or h2 for Picard and simple quasi-Newton, h2 or none for tnewton
    #[arg(long)]
    precond: Option<Precond>,
    /// L-BFGS memory size
    #[arg(long, default_value_t = 7)]
    m: usize,
    #[arg(long = "n-ls", default_value_t = 10)]
    n_ls: usize,
    #[arg(long = "lambda-min", default_value_t = 1e-2)]
    lambda_min: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,
    /// Relative residual at which truncated Newton stops CG
    #[arg(long = "cg-tol", default_value_t = 1e-2)]
    cg_tol: f64,
    /// Largest N for which truncated Newton may build the dense Hessian
    #[arg(long = "oracle-cap", default_value_t = ica_core::curvature::DEFAULT_ORACLE_CAP)]
    oracle_cap: usize,
    /// Initial Infomax step size
    #[arg(long = "infomax-alpha0", default_value_t = 0.01)]
    infomax_alpha0: f64,
    /// Run repeats one after another for clean timings
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

impl CommonArgs {
    fn into_spec(self, solvers: Vec<SolverId>) -> RunSpec {
        let mut settings = SolverSettings { precond: self.precond, ..SolverSettings::default() };
        settings.solver.memory = self.m;
        settings.solver.n_ls = self.n_ls;
        settings.solver.lambda_min = self.lambda_min;
        settings.solver.tol = self.tol;
        settings.solver.max_iter = self.max_iter;
        settings.tnewton.cg_tol = self.cg_tol;
        settings.tnewton.oracle_cap = self.oracle_cap;
        settings.infomax.max_passes = self.max_iter;
        settings.infomax.alpha0 = self.infomax_alpha0;
        let data = match (self.data, self.experiment) {
            (Some(path), _) => DataSource::File { path },
            (None, Some(experiment)) => DataSource::Experiment { experiment, n: self.n, t: self.t },
            (None, None) => unreachable!("clap requires one data source"),
        };
        RunSpec {
            solvers,
            settings,
            data,
            seed: self.seed,
            repeats: self.repeats,
            out_dir: self.out,
            sequential: self.sequential,
            svg: self.svg,
        }
    }
}

fn report(r: &BenchReport) -> Result<(), BenchError> {
    for s in &r.summary.solvers {
        let med = s
            .median_iterations_to_tol
            .map_or_else(|| "-".to_string(), |m| format!("{m}"));
        println!(
            "{:<10} reached tol {:>5.1}%  median iterations {med}  failed {}",
            s.solver.as_str(),
            100.0 * s.reached_tol_fraction,
            s.failed_runs
        );
        for w in &s.warnings {
            eprintln!("warning: {}: {w}", s.solver);
        }
    }
    if r.all_diverged() {
        return Err(BenchError::AllDiverged(r.runs.len()));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Gen { experiment, n, t, seed, out } => {
            let problem = gen_experiment(experiment, seed, n, t).map_err(|e| match e {
                ica_core::IcaError::InvalidConfig(msg) => BenchError::InvalidSpec(msg),
                e => e.into(),
            })?;
            save_matrix(&out, &DataMatrix::new(problem.observed)?)?;
            Ok(())
        }
        Command::Run { solver, common } => report(&run_benchmark(&common.into_spec(vec![solver]))?),
        Command::Compare { solvers, common } => report(&compare(&common.into_spec(solvers))?),
        Command::Plot { summary, out } => {
            std::fs::write(out, render_svg(&read_summary(&summary)?))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(4),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
