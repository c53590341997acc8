//! Accuracy metrics for sparse drift estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, DriftError, Result};
use crate::stats::SuffStats;

/// Magnitudes at or below this are treated as zero by default.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

pub const METRIC_HEADER: &str = "seed,method,T,p,d,s,support_errors,sign_consistent,l1,l2,an_stat";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub horizon: f64,
    pub p: usize,
    pub d: usize,
    pub s: usize,
    pub support_errors: usize,
    pub sign_consistent: bool,
    pub l1: f64,
    pub l2: f64,
    pub an_stat: Option<f64>,
    pub seed: u64,
}

impl MetricRow {
    /// Fields in [`METRIC_HEADER`] order.
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.method,
            self.horizon,
            self.p,
            self.d,
            self.s,
            self.support_errors,
            self.sign_consistent,
            self.l1,
            self.l2,
            self.an_stat.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}

fn same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return arg_err(format!("vectors differ in length ({} vs {})", a.len(), b.len()));
    }
    Ok(())
}

fn sign_with_tol(v: f64, zero_tol: f64) -> i8 {
    if v.abs() <= zero_tol {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Number of coordinates whose zero/nonzero status is misidentified.
pub fn support_errors(theta_hat: &DVector<f64>, theta0: &DVector<f64>, zero_tol: f64) -> Result<usize> {
    same_len(theta_hat, theta0)?;
    Ok(theta_hat
        .iter()
        .zip(theta0.iter())
        .filter(|(h, t)| (h.abs() > zero_tol) != (**t != 0.0))
        .count())
}

/// Exact agreement of sign patterns, zeros included.
pub fn sign_consistent(theta_hat: &DVector<f64>, theta0: &DVector<f64>, zero_tol: f64) -> Result<bool> {
    same_len(theta_hat, theta0)?;
    Ok(theta_hat
        .iter()
        .zip(theta0.iter())
        .all(|(h, t)| sign_with_tol(*h, zero_tol) == sign_with_tol(*t, 0.0)))
}

/// `(‖θ̂ − θ0‖₁, ‖θ̂ − θ0‖₂)`.
pub fn lp_errors(theta_hat: &DVector<f64>, theta0: &DVector<f64>) -> Result<(f64, f64)> {
    same_len(theta_hat, theta0)?;
    let diff = theta_hat - theta0;
    Ok((diff.lp_norm(1), diff.norm()))
}

/// Standardized statistic `√T ŝ⁻¹ αᵀ(θ̂_Ŝ − θ0_Ŝ)` with equal weights on the
/// estimated support Ŝ and `ŝ² = αᵀ (C_T^{ŜŜ})⁻¹ α`.
pub fn an_statistic(theta_hat: &DVector<f64>, theta0: &DVector<f64>, stats: &SuffStats, zero_tol: f64) -> Result<f64> {
    same_len(theta_hat, theta0)?;
    if theta_hat.len() != stats.n_params() {
        return arg_err("estimate and statistics differ in dimension");
    }
    let support: Vec<usize> = (0..theta_hat.len()).filter(|&j| theta_hat[j].abs() > zero_tol).collect();
    if support.is_empty() {
        return Err(DriftError::EmptySupport);
    }
    let s = support.len();
    let block = DMatrix::from_fn(s, s, |a, b| stats.c[(support[a], support[b])]);
    let alpha = DVector::from_element(s, 1.0 / (s as f64).sqrt());
    let chol = block.cholesky().ok_or(DriftError::SingularInformation)?;
    let s2 = alpha.dot(&chol.solve(&alpha));
    if !(s2 > 0.0) || !s2.is_finite() {
        return Err(DriftError::SingularInformation);
    }
    let proj: f64 = support.iter().map(|&j| theta_hat[j] - theta0[j]).sum::<f64>() / (s as f64).sqrt();
    Ok(stats.horizon.sqrt() * proj / s2.sqrt())
}
