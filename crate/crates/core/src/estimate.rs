//! Estimators: MLE, Lasso, the marginal pre-estimator and the two-stage
//! adaptive Lasso with weights `w_j = 1/|θ̃_j|`.

use nalgebra::DVector;

use crate::error::{arg_err, DriftError, Result};
use crate::solvers::{ridge_solve, weighted_lasso, weighted_lasso_from, Fit, Method, SolveOptions};
use crate::stats::SuffStats;

/// Pre-estimate coordinates below this fraction of the largest one are pinned.
pub const PIN_RELATIVE: f64 = 1e-8;
/// Pinning threshold used when the pre-estimate is identically zero.
pub const PIN_ABSOLUTE: f64 = 1e-12;

pub fn mle(stats: &SuffStats) -> Result<Fit> {
    mle_with(stats, &SolveOptions::default())
}

pub fn mle_with(stats: &SuffStats, opts: &SolveOptions) -> Result<Fit> {
    ridge_solve(stats, opts)
}

pub fn lasso(stats: &SuffStats, lambda: f64, opts: &SolveOptions) -> Result<Fit> {
    lasso_from(stats, lambda, opts, None)
}

pub(crate) fn lasso_from(
    stats: &SuffStats,
    lambda: f64,
    opts: &SolveOptions,
    init: Option<&DVector<f64>>,
) -> Result<Fit> {
    let ones = DVector::from_element(stats.n_params(), 1.0);
    let mut fit = weighted_lasso_from(stats, lambda, &ones, opts, init)?;
    fit.method = Method::Lasso;
    Ok(fit)
}

/// `θ̃ = -(1/T) ∫ Φᵀ dX`, an estimator of `C_∞ θ_0`.
pub fn marginal(stats: &SuffStats) -> Fit {
    let p = stats.n_params();
    Fit {
        theta: stats.m.clone(),
        method: Method::Marginal,
        lambda: 0.0,
        weights: DVector::from_element(p, 1.0),
        kkt_residual: 0.0,
        iterations: 0,
        converged: true,
    }
}

/// Adaptive weights `1/|θ̃_j|`, with negligible coordinates mapped to `+∞`.
pub fn adaptive_weights(pre: &DVector<f64>) -> Result<DVector<f64>> {
    if pre.iter().any(|v| !v.is_finite()) {
        return Err(DriftError::NumericInput("pre-estimate".into()));
    }
    let largest = pre.amax();
    let cutoff = if largest > 0.0 { PIN_RELATIVE * largest } else { PIN_ABSOLUTE };
    let weights = pre.map(|v| if v.abs() < cutoff { f64::INFINITY } else { 1.0 / v.abs() });
    if weights.iter().all(|w| w.is_infinite()) {
        return Err(DriftError::DegeneratePreEstimator);
    }
    Ok(weights)
}

pub fn adaptive_lasso(stats: &SuffStats, lambda: f64, pre: &Fit, opts: &SolveOptions) -> Result<Fit> {
    adaptive_lasso_from(stats, lambda, pre, opts, None)
}

pub(crate) fn adaptive_lasso_from(
    stats: &SuffStats,
    lambda: f64,
    pre: &Fit,
    opts: &SolveOptions,
    init: Option<&DVector<f64>>,
) -> Result<Fit> {
    if pre.theta.len() != stats.n_params() {
        return arg_err("pre-estimate has the wrong length");
    }
    let weights = adaptive_weights(&pre.theta)?;
    let mut fit = match init {
        Some(t) => weighted_lasso_from(stats, lambda, &weights, opts, Some(t))?,
        None => weighted_lasso(stats, lambda, &weights, opts)?,
    };
    fit.method = Method::AdaptiveLasso;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{BasisFn, DriftDictionary};
    use crate::simulate::{simulate_path, SimConfig, Trajectory};
    use crate::solvers::lambda_max;
    use crate::stats::compute_stats;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn quad(c: DMatrix<f64>, g: Vec<f64>) -> SuffStats {
        let g = DVector::from_vec(g);
        SuffStats::new(c, g.clone(), -g, 1.0).unwrap()
    }

    #[test]
    fn ou_mle_matches_closed_form() {
        let dict = DriftDictionary::linear_ou(1, 1).unwrap();
        let path = simulate_path(&dict, &[1.0], &SimConfig::new(50.0, 0.01, 12)).unwrap();
        let s = compute_stats(&path, &dict).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..path.n_steps() {
            let x = path.state(k)[0];
            num += x * (path.state(k + 1)[0] - x);
            den += x * x * 0.01;
        }
        let closed = -num / den;
        let fit = mle(&s).unwrap();
        assert!((fit.theta[0] - closed).abs() < 1e-10 * closed.abs());
        assert!((fit.theta[0] - s.m[0] / s.c[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn mle_recovers_exact_quadratic_minimizer() {
        let s = quad(DMatrix::identity(3, 3), vec![-1.0, 0.5, -2.0]);
        let fit = mle(&s).unwrap();
        assert_eq!(fit.theta.as_slice(), &[1.0, -0.5, 2.0]);
    }

    #[test]
    fn mle_survives_rank_deficient_information() {
        // d = 1 with p = 3 linear-in-x maps: C has rank one
        let maps = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, -1.0)];
        let dict = DriftDictionary::linear_ou_with_maps(1, maps).unwrap();
        let path = simulate_path(&dict, &[1.0, 0.0, 0.0], &SimConfig::new(5.0, 0.01, 1)).unwrap();
        let s = compute_stats(&path, &dict).unwrap();
        let fit = mle(&s).unwrap();
        assert!(fit.theta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lasso_at_zero_penalty_equals_mle() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, -0.3, 0.1, -0.3, 1.0]);
        let s = quad(c, vec![-1.0, 0.7, 2.0]);
        let a = lasso(&s, 0.0, &SolveOptions::default()).unwrap();
        let b = mle(&s).unwrap();
        assert!((a.theta - b.theta).amax() < 1e-8);
    }

    #[test]
    fn lasso_above_lambda_max_is_zero() {
        let s = quad(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]), vec![-3.0, 1.0]);
        let lmax = lambda_max(&s, &DVector::from_element(2, 1.0)).unwrap();
        let fit = lasso(&s, lmax, &SolveOptions::default()).unwrap();
        assert!(fit.theta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn marginal_telescopes_and_vanishes_on_flat_paths() {
        let one: BasisFn = Arc::new(|_x, out| out.fill(1.0));
        let dict = DriftDictionary::custom(1, vec![one], None, None).unwrap();
        let path = Trajectory::new(0.5, 1, vec![0.0, 1.0, 0.5, 2.0], None).unwrap();
        let s = compute_stats(&path, &dict).unwrap();
        assert!((marginal(&s).theta[0] + 2.0 / 1.5).abs() < 1e-15);

        let flat = Trajectory::new(0.5, 1, vec![0.7; 5], None).unwrap();
        let s = compute_stats(&flat, &dict).unwrap();
        assert_eq!(marginal(&s).theta[0], 0.0);
    }

    #[test]
    fn adaptive_with_unit_pre_is_plain_lasso() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let s = quad(c, vec![-2.0, 0.4]);
        let pre = Fit { theta: DVector::from_element(2, 1.0), ..marginal(&s) };
        let a = adaptive_lasso(&s, 0.3, &pre, &SolveOptions::default()).unwrap();
        let b = lasso(&s, 0.3, &SolveOptions::default()).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.method, Method::AdaptiveLasso);
    }

    #[test]
    fn adaptive_with_oracle_pre_is_restricted_mle() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.3, 0.5, 1.0, 0.2, 0.3, 0.2, 1.5]);
        let s = quad(c.clone(), vec![-3.0, -1.0, 0.5]);
        let pre = Fit { theta: DVector::from_vec(vec![1e9, 1e9, 1e-30]), ..marginal(&s) };
        let fit = adaptive_lasso(&s, 0.5, &pre, &SolveOptions::default()).unwrap();
        // MLE on coordinates {0, 1}
        let sub = c.view((0, 0), (2, 2)).into_owned();
        let restricted = sub.lu().solve(&DVector::from_vec(vec![3.0, 1.0])).unwrap();
        assert_eq!(fit.theta[2], 0.0);
        assert!((fit.theta[0] - restricted[0]).abs() < 1e-6);
        assert!((fit.theta[1] - restricted[1]).abs() < 1e-6);
    }

    #[test]
    fn all_pinned_pre_estimate_is_an_error() {
        let s = quad(DMatrix::identity(2, 2), vec![-1.0, 1.0]);
        let pre = Fit { theta: DVector::zeros(2), ..marginal(&s) };
        assert!(matches!(
            adaptive_lasso(&s, 0.1, &pre, &SolveOptions::default()),
            Err(DriftError::DegeneratePreEstimator)
        ));
    }

    #[test]
    fn pinning_rule() {
        let w = adaptive_weights(&DVector::from_vec(vec![2.0, 1e-9, -0.5, 0.0])).unwrap();
        assert_eq!(w[0], 0.5);
        assert!(w[1].is_infinite() && w[3].is_infinite());
        assert_eq!(w[2], 2.0);
    }
}
