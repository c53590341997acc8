//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 runtime
//! or numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::dictionary::DictionaryKind;
use crate::error::{DriftError, Result};
use crate::experiments::{build_dictionary, diagnostics_report, fit_methods, parse_list, run_experiment, BaseCoeff, ExperimentConfig, PreChoice};
use crate::simulate::{simulate_path, SimConfig, Trajectory, DEFAULT_BURN_IN};
use crate::solvers::{kkt_residual, Method, SolveOptions};
use crate::stats::compute_stats;
use crate::tune::{CvSettings, DEFAULT_FOLDS, DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "sparse-drift", version, about = "Sparse drift estimation for ergodic diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an Euler path of dX = -b(X) dt + dW and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the drift parameter from a trajectory CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment described by a config file.
    Experiment(ExperimentArgs),
    /// Compare empirical tail frequencies with the concentration bounds.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct DictArgs {
    /// Dictionary family: cosine or linear-ou.
    #[arg(long = "dict", default_value = "cosine")]
    dict: DictionaryKind,
    /// Number of dictionary functions (defaults to the length of --theta0).
    #[arg(long)]
    p: Option<usize>,
    /// Coefficient c of the known part φ0(x) = c·x; `3s` means three times the number of nonzeros of θ0.
    #[arg(long = "base-coeff", default_value = "0")]
    base_coeff: BaseCoeff,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// State dimension.
    #[arg(long)]
    d: usize,
    #[command(flatten)]
    dict: DictArgs,
    /// True parameter: a CSV file or an inline comma-separated list.
    #[arg(long)]
    theta0: String,
    /// Horizon T of the recorded path.
    #[arg(long = "T", alias = "horizon")]
    horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long = "burn-in", default_value_t = DEFAULT_BURN_IN)]
    burn_in: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the Brownian increments.
    #[arg(long = "record-noise")]
    record_noise: bool,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Trajectory CSV as written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    dict: DictArgs,
    /// mle, lasso, adalasso or marginal.
    #[arg(long, default_value = "lasso")]
    method: Method,
    /// Fixed penalty.
    #[arg(long, conflicts_with = "cv")]
    lambda: Option<f64>,
    /// Select the penalty by block cross-validation.
    #[arg(long)]
    cv: bool,
    #[arg(long = "cv-folds", default_value_t = DEFAULT_FOLDS)]
    cv_folds: usize,
    #[arg(long = "grid-size", default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long = "grid-ratio", default_value_t = DEFAULT_GRID_RATIO)]
    grid_ratio: f64,
    /// Pre-estimator for the adaptive Lasso: lasso or marginal.
    #[arg(long, default_value = "lasso")]
    pre: PreChoice,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replications (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Output report CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Experiment(a) => {
            set_threads(a.threads)?;
            let cfg = ExperimentConfig::load(&a.config)?;
            let path = run_experiment(&cfg, &a.out_dir)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Diagnose(a) => diagnose(a),
    }
}

fn usage(flag: &str, msg: impl std::fmt::Display) -> DriftError {
    DriftError::Argument(format!("{flag}: {msg}"))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| DriftError::Numeric(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_theta(spec: &str) -> Result<Vec<f64>> {
    let path = Path::new(spec);
    let text = if path.is_file() { fs::read_to_string(path)? } else { spec.to_string() };
    let values = parse_list(&text.replace('\n', ","), |s| {
        s.trim().parse::<f64>().map_err(|_| usage("--theta0", format!("`{s}` is not a number")))
    })?;
    if values.is_empty() {
        return Err(usage("--theta0", "no values given"));
    }
    Ok(values)
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut f = io::BufWriter::new(fs::File::create(path)?);
            write(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let theta0 = parse_theta(&a.theta0)?;
    let p = a.dict.p.unwrap_or(theta0.len());
    if p != theta0.len() {
        return Err(usage("--p", format!("{p} disagrees with the {} entries of --theta0", theta0.len())));
    }
    let s = theta0.iter().filter(|v| **v != 0.0).count();
    let dict = build_dictionary(a.dict.dict, a.d, p, a.dict.base_coeff.resolve(s))?;
    let mut cfg = SimConfig::new(a.horizon, a.dt, a.seed).with_burn_in(a.burn_in);
    cfg.record_noise = a.record_noise;
    let path = simulate_path(&dict, &theta0, &cfg)?;
    emit(a.out.as_deref(), |w| path.write_csv(w))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let traj = Trajectory::load_csv(&a.input)?;
    let Some(p) = a.dict.p else {
        return Err(usage("--p", "the number of dictionary functions is required"));
    };
    let base = match a.dict.base_coeff {
        BaseCoeff::Fixed(c) => c,
        BaseCoeff::PerNonzero(_) => return Err(usage("--base-coeff", "needs a number when θ0 is unknown")),
    };
    let dict = build_dictionary(a.dict.dict, traj.dim(), p, base)?;
    let penalized = matches!(a.method, Method::Lasso | Method::AdaptiveLasso);
    if penalized && a.lambda.is_none() && !a.cv {
        return Err(usage("--lambda", format!("{} needs --lambda <v> or --cv", a.method)));
    }
    if let Some(l) = a.lambda {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(usage("--lambda", "must be finite and nonnegative"));
        }
    }
    let stats = compute_stats(&traj, &dict)?;
    let cv = CvSettings { folds: a.cv_folds, grid_size: a.grid_size, grid_ratio: a.grid_ratio };
    let opts = SolveOptions::default();
    let lambda = if a.cv { None } else { a.lambda };
    let (_, fit) = fit_methods(&traj, &dict, &stats, &[a.method], lambda, a.pre, &cv, &opts)
        .pop()
        .expect("one method requested");
    let fit = fit?;
    let kkt = if penalized || a.method == Method::Mle { kkt_residual(&stats, &fit)? } else { fit.kkt_residual };
    let doc = json!({
        "theta": fit.theta.as_slice(),
        "method": fit.method,
        "lambda": fit.lambda,
        "kkt_residual": kkt,
        "converged": fit.converged,
        "iterations": fit.iterations,
    });
    emit(a.out.as_deref(), |w| {
        serde_json::to_writer_pretty(&mut *w, &doc).map_err(|e| DriftError::Numeric(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    set_threads(a.threads)?;
    let cfg = ExperimentConfig::load(&a.config)?;
    let reps = a.reps.unwrap_or(cfg.reps);
    let (_, _, report) = diagnostics_report(&cfg, reps)?;
    emit(a.out.as_deref(), |w| report.write_csv(w))?;
    eprintln!(
        "K = {}, M = {}, entry C[{},{}], eps coordinate {}, {} flag(s)",
        report.k,
        report.m_hat,
        report.entry.0 + 1,
        report.entry.1 + 1,
        report.eps_coord + 1,
        report.n_flags()
    );
    Ok(())
}
