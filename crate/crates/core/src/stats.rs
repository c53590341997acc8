//! Sufficient statistics of the quadratic likelihood.
//!
//! For the linear drift, the scaled negative log-likelihood is, up to a
//! θ-free constant,
//!
//! ```text
//! L_T(θ) = gᵀθ + ½ θᵀ C θ
//! C = (1/T) ∫ Φ(X)ᵀ Φ(X) dt
//! g = (1/T) ∫ Φ(X)ᵀ dX + (1/T) ∫ Φ(X)ᵀ φ_0(X) dt
//! ```
//!
//! Integrals are left-endpoint sums, so the stochastic one is an Itô sum and
//! statistics over adjacent time blocks combine exactly by T-weighting.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dictionary::DriftDictionary;
use crate::error::{arg_err, DriftError, Result};
use crate::simulate::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    /// Empirical Gram matrix `C_T`.
    pub c: DMatrix<f64>,
    /// Linear coefficient of the likelihood.
    pub g: DVector<f64>,
    /// Marginal estimator `-(1/T) ∫ Φᵀ dX`.
    pub m: DVector<f64>,
    /// Observation horizon.
    pub horizon: f64,
}

/// Oracle martingale term `ε_T = (1/T) ∫ Φᵀ dW`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStats {
    pub eps: DVector<f64>,
}

impl SuffStats {
    pub fn new(c: DMatrix<f64>, g: DVector<f64>, m: DVector<f64>, horizon: f64) -> Result<Self> {
        let p = g.len();
        if c.nrows() != p || c.ncols() != p || m.len() != p {
            return arg_err("inconsistent sufficient-statistic dimensions");
        }
        if !(horizon > 0.0) {
            return arg_err("horizon must be positive");
        }
        Ok(Self { c, g, m, horizon })
    }

    pub fn n_params(&self) -> usize {
        self.g.len()
    }

    /// T-weighted combination of statistics from disjoint time blocks.
    pub fn combine<'a, I>(blocks: I) -> Result<SuffStats>
    where
        I: IntoIterator<Item = &'a SuffStats>,
    {
        let mut iter = blocks.into_iter();
        let first = match iter.next() {
            Some(s) => s,
            None => return arg_err("cannot combine an empty set of blocks"),
        };
        let mut c = &first.c * first.horizon;
        let mut g = &first.g * first.horizon;
        let mut m = &first.m * first.horizon;
        let mut horizon = first.horizon;
        for s in iter {
            if s.n_params() != first.n_params() {
                return arg_err("blocks have different parameter dimensions");
            }
            c += &s.c * s.horizon;
            g += &s.g * s.horizon;
            m += &s.m * s.horizon;
            horizon += s.horizon;
        }
        Ok(SuffStats { c: c / horizon, g: g / horizon, m: m / horizon, horizon })
    }

    /// Flat CSV row: `C` row-major, then `g`, `m`, `T`. The row has `(p+1)²` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.n_params();
        let mut vals: Vec<String> = Vec::with_capacity((p + 1) * (p + 1));
        for i in 0..p {
            for j in 0..p {
                vals.push(format!("{}", self.c[(i, j)]));
            }
        }
        vals.extend(self.g.iter().map(|v| format!("{v}")));
        vals.extend(self.m.iter().map(|v| format!("{v}")));
        vals.push(format!("{}", self.horizon));
        writeln!(out, "{}", vals.join(","))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_csv(&mut f)
    }

    pub fn from_csv_str(text: &str) -> Result<SuffStats> {
        let vals = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| DriftError::Parse(format!("bad number `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let side = (vals.len() as f64).sqrt().round() as usize;
        if side < 2 || side * side != vals.len() {
            return Err(DriftError::Parse(format!("{} values is not (p+1)² for any p ≥ 1", vals.len())));
        }
        let p = side - 1;
        let c = DMatrix::from_row_slice(p, p, &vals[..p * p]);
        let g = DVector::from_column_slice(&vals[p * p..p * p + p]);
        let m = DVector::from_column_slice(&vals[p * p + p..p * p + 2 * p]);
        SuffStats::new(c, g, m, vals[p * p + 2 * p])
    }
}

fn check_traj(traj: &Trajectory, dict: &DriftDictionary) -> Result<()> {
    if traj.dim() != dict.dim() {
        return arg_err(format!("trajectory width {} does not match dictionary d={}", traj.dim(), dict.dim()));
    }
    if traj.len() < 2 {
        return arg_err("trajectory needs at least two grid points");
    }
    Ok(())
}

/// Reduces a trajectory to `(C_T, g_T, m_T)`.
pub fn compute_stats(traj: &Trajectory, dict: &DriftDictionary) -> Result<SuffStats> {
    check_traj(traj, dict)?;
    let d = dict.dim();
    let p = dict.n_params();
    let dt = traj.dt();
    let horizon = traj.horizon();
    let with_base = !dict.base_is_zero();

    let mut phi = DMatrix::<f64>::zeros(d, p);
    let mut base = DVector::<f64>::zeros(d);
    let mut dx = DVector::<f64>::zeros(d);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut ito = DVector::<f64>::zeros(p);
    let mut cross = DVector::<f64>::zeros(p);

    for k in 0..traj.n_steps() {
        let x = traj.state(k);
        let x_next = traj.state(k + 1);
        dict.phi_into(x, phi.as_mut_slice());
        for ((v, a), b) in dx.iter_mut().zip(x_next).zip(x) {
            *v = a - b;
        }
        gram.gemm_tr(dt, &phi, &phi, 1.0);
        ito.gemv_tr(1.0, &phi, &dx, 1.0);
        if with_base {
            dict.base_into(x, base.as_mut_slice());
            cross.gemv_tr(dt, &phi, &base, 1.0);
        }
    }

    let mut c = gram / horizon;
    symmetrize(&mut c);
    let ito = ito / horizon;
    let m = -&ito;
    let g = if with_base { ito + cross / horizon } else { ito };
    Ok(SuffStats { c, g, m, horizon })
}

/// `ε_T = (1/T) Σ Φ(X_k)ᵀ ΔW_k` from the recorded Brownian increments.
pub fn compute_noise_term(traj: &Trajectory, dict: &DriftDictionary) -> Result<NoiseStats> {
    check_traj(traj, dict)?;
    if traj.noise().is_none() {
        return Err(DriftError::MissingNoise);
    }
    let d = dict.dim();
    let p = dict.n_params();
    let mut phi = DMatrix::<f64>::zeros(d, p);
    let mut eps = DVector::<f64>::zeros(p);
    for k in 0..traj.n_steps() {
        dict.phi_into(traj.state(k), phi.as_mut_slice());
        let w = DVector::from_column_slice(traj.noise_increment(k).expect("noise present"));
        eps.gemv_tr(1.0, &phi, &w, 1.0);
    }
    Ok(NoiseStats { eps: eps / traj.horizon() })
}

/// Computes statistics for each of `k` contiguous, equal-length blocks.
/// The blocks share boundary grid points, so their increments partition the path.
pub fn block_stats(traj: &Trajectory, dict: &DriftDictionary, k: usize) -> Result<Vec<SuffStats>> {
    let n = traj.n_steps();
    if k == 0 || n < k {
        return arg_err(format!("cannot split {n} increments into {k} blocks"));
    }
    (0..k)
        .map(|b| {
            let start = b * n / k;
            let end = (b + 1) * n / k;
            compute_stats(&traj.segment(start, end)?, dict)
        })
        .collect()
}

fn check_theta(stats: &SuffStats, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != stats.n_params() {
        return arg_err(format!("theta has length {}, statistics have p={}", theta.len(), stats.n_params()));
    }
    Ok(())
}

/// θ-dependent part of the scaled negative log-likelihood, `gᵀθ + ½θᵀCθ`.
pub fn neg_loglik(stats: &SuffStats, theta: &DVector<f64>) -> Result<f64> {
    check_theta(stats, theta)?;
    Ok(stats.g.dot(theta) + 0.5 * theta.dot(&(&stats.c * theta)))
}

/// `∇L_T(θ) = g + Cθ`.
pub fn gradient(stats: &SuffStats, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_theta(stats, theta)?;
    Ok(&stats.g + &stats.c * theta)
}

pub(crate) fn symmetrize(c: &mut DMatrix<f64>) {
    let p = c.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}
