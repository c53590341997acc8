//! Weighted-ℓ1 penalized quadratic minimization and its KKT certificate.
//!
//! Every estimator reduces to
//!
//! ```text
//! min_θ  gᵀθ + ½ θᵀCθ + λ Σ_j w_j |θ_j|
//! ```
//!
//! solved by cyclic coordinate descent. A weight of `+∞` pins its
//! coordinate to zero.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, DriftError, Result};
use crate::stats::{gradient, SuffStats};

/// Plain solves are regularized when `λ_max / λ_min` of `C` exceeds this.
pub const RIDGE_CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Sweeps stop once the largest coordinate change falls below this.
    pub tol: f64,
    /// Relative ridge `δ = ridge_delta_rel · tr(C)/p` for ill-conditioned MLE solves.
    pub ridge_delta_rel: f64,
    /// A fit is only declared converged when its KKT residual is at most
    /// `kkt_tol · (1 + ‖g‖_∞)`.
    pub kkt_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-10, ridge_delta_rel: 1e-8, kkt_tol: 1e-8 }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return arg_err("max_iter must be at least 1");
        }
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) {
            return arg_err("tolerances must be positive");
        }
        if !(self.ridge_delta_rel >= 0.0) {
            return arg_err("ridge_delta_rel must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MLE")]
    Mle,
    Lasso,
    AdaptiveLasso,
    Marginal,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "MLE",
            Method::Lasso => "Lasso",
            Method::AdaptiveLasso => "AdaptiveLasso",
            Method::Marginal => "Marginal",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(Method::Mle),
            "lasso" => Ok(Method::Lasso),
            "adalasso" | "adaptivelasso" | "adaptive-lasso" | "adaptive_lasso" => Ok(Method::AdaptiveLasso),
            "marginal" => Ok(Method::Marginal),
            other => arg_err(format!("unknown method `{other}`")),
        }
    }
}

/// An estimate together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub theta: DVector<f64>,
    pub method: Method,
    pub lambda: f64,
    /// Penalty weights; `+∞` marks a pinned coordinate.
    pub weights: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Fit {
    /// Value of the penalized objective at this fit.
    pub fn objective(&self, stats: &SuffStats) -> f64 {
        penalized_objective(stats, &self.theta, self.lambda, &self.weights)
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn penalized_objective(stats: &SuffStats, theta: &DVector<f64>, lambda: f64, weights: &DVector<f64>) -> f64 {
    let quad = stats.g.dot(theta) + 0.5 * theta.dot(&(&stats.c * theta));
    let pen: f64 = theta
        .iter()
        .zip(weights.iter())
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, w)| w * t.abs())
        .sum();
    quad + lambda * pen
}

fn check_problem(stats: &SuffStats, lambda: f64, weights: &DVector<f64>) -> Result<()> {
    let p = stats.n_params();
    if weights.len() != p {
        return arg_err(format!("weights have length {}, expected {p}", weights.len()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return arg_err(format!("lambda must be finite and ≥ 0 (got {lambda})"));
    }
    if weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
        return arg_err("weights must be positive (or +∞ to pin a coordinate)");
    }
    if stats.c.iter().chain(stats.g.iter()).any(|v| !v.is_finite()) {
        return Err(DriftError::NumericInput("sufficient statistics".into()));
    }
    Ok(())
}

fn kkt_threshold(stats: &SuffStats, opts: &SolveOptions) -> f64 {
    opts.kkt_tol * (1.0 + stats.g.amax())
}

/// Weighted Lasso by cyclic coordinate descent from `θ = 0`.
pub fn weighted_lasso(stats: &SuffStats, lambda: f64, weights: &DVector<f64>, opts: &SolveOptions) -> Result<Fit> {
    weighted_lasso_from(stats, lambda, weights, opts, None)
}

/// Weighted Lasso warm-started at `init` (used along descending λ paths).
pub fn weighted_lasso_from(
    stats: &SuffStats,
    lambda: f64,
    weights: &DVector<f64>,
    opts: &SolveOptions,
    init: Option<&DVector<f64>>,
) -> Result<Fit> {
    opts.validate()?;
    check_problem(stats, lambda, weights)?;
    let p = stats.n_params();
    let c = &stats.c;
    let g = &stats.g;

    let mut theta = match init {
        Some(t) if t.len() != p => return arg_err("warm start has the wrong length"),
        Some(t) => t.clone(),
        None => DVector::zeros(p),
    };
    for j in 0..p {
        if weights[j].is_infinite() {
            theta[j] = 0.0;
        } else if c[(j, j)] <= 0.0 && (lambda == 0.0 || lambda * weights[j] < g[j].abs()) {
            // zero curvature: only a penalty that dominates the slope fixes θ_j
            return Err(DriftError::DegenerateCoordinate(j));
        }
    }

    let threshold = kkt_threshold(stats, opts);
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;
        // fresh gradient each sweep keeps roundoff from accumulating
        let mut r = g + c * &theta;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let w = weights[j];
            if w.is_infinite() {
                continue;
            }
            let cjj = c[(j, j)];
            let old = theta[j];
            let z = -(r[j] - cjj * old);
            let new = if cjj > 0.0 { soft_threshold(z, lambda * w) / cjj } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                theta[j] = new;
                r.axpy(delta, &c.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < opts.tol {
            kkt = kkt_value(c, g, &theta, lambda, weights);
            if kkt <= threshold {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        kkt = kkt_value(c, g, &theta, lambda, weights);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(DriftError::Numeric("coordinate descent produced non-finite iterate".into()));
    }
    Ok(Fit {
        theta,
        method: Method::Lasso,
        lambda,
        weights: weights.clone(),
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

fn kkt_value(c: &DMatrix<f64>, g: &DVector<f64>, theta: &DVector<f64>, lambda: f64, weights: &DVector<f64>) -> f64 {
    kkt_from_gradient(&(g + c * theta), theta, lambda, weights)
}

fn kkt_from_gradient(r: &DVector<f64>, theta: &DVector<f64>, lambda: f64, weights: &DVector<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..theta.len() {
        let w = weights[j];
        if w.is_infinite() {
            continue;
        }
        let t = theta[j];
        let viol = if t != 0.0 {
            (r[j] + lambda * w * t.signum()).abs()
        } else {
            (r[j].abs() - lambda * w).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

/// Largest violation of the subgradient optimality conditions at `fit.theta`.
pub fn kkt_residual(stats: &SuffStats, fit: &Fit) -> Result<f64> {
    let grad = gradient(stats, &fit.theta)?;
    if fit.weights.len() != fit.theta.len() {
        return arg_err("fit weights and theta differ in length");
    }
    Ok(kkt_from_gradient(&grad, &fit.theta, fit.lambda, &fit.weights))
}

/// Solves `(C + δI) θ = -g`, with `δ > 0` only when `C` is ill-conditioned.
pub fn ridge_solve(stats: &SuffStats, opts: &SolveOptions) -> Result<Fit> {
    opts.validate()?;
    let p = stats.n_params();
    if p == 0 {
        return arg_err("empty parameter vector");
    }
    if stats.c.iter().chain(stats.g.iter()).any(|v| !v.is_finite()) {
        return Err(DriftError::NumericInput("sufficient statistics".into()));
    }
    let eig = stats.c.clone().symmetric_eigenvalues();
    let max_eig = eig.max();
    let min_eig = eig.min();
    let ill = !(min_eig > 0.0) || max_eig / min_eig > RIDGE_CONDITION_LIMIT;
    let delta = if ill {
        let scale = stats.c.trace() / p as f64;
        let delta = opts.ridge_delta_rel * scale;
        if delta > 0.0 {
            delta
        } else {
            opts.ridge_delta_rel.max(f64::MIN_POSITIVE)
        }
    } else {
        0.0
    };
    let mut a = stats.c.clone();
    for j in 0..p {
        a[(j, j)] += delta;
    }
    let rhs = -&stats.g;
    let theta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DriftError::Numeric("singular linear system in MLE solve".into()))?,
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(DriftError::Numeric("MLE solve produced non-finite values".into()));
    }
    let weights = DVector::from_element(p, 1.0);
    let kkt_residual = kkt_value(&stats.c, &stats.g, &theta, 0.0, &weights);
    Ok(Fit { theta, method: Method::Mle, lambda: 0.0, weights, kkt_residual, iterations: 1, converged: true })
}

/// Smallest λ at which `θ = 0` satisfies the KKT conditions.
pub fn lambda_max(stats: &SuffStats, weights: &DVector<f64>) -> Result<f64> {
    if weights.len() != stats.n_params() {
        return arg_err("weights have the wrong length");
    }
    let mut best: Option<f64> = None;
    for (gj, &w) in stats.g.iter().zip(weights.iter()) {
        if w.is_finite() && w > 0.0 {
            let v = gj.abs() / w;
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best.ok_or_else(|| DriftError::Argument("all weights are infinite".into()))
}
