//! Numeric checks of the structural assumptions and of the tail bounds for
//! the empirical Gram matrix and the martingale term.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dictionary::DriftDictionary;
use crate::error::{arg_err, DriftError, Result};
use crate::simulate::{simulate_path, SimConfig};
use crate::stats::{compute_noise_term, compute_stats};

/// Reference runs for `Ĉ_∞` are this many times longer than the experiment horizon.
pub const REFERENCE_HORIZON_FACTOR: f64 = 50.0;
/// Seed offset for the reference run, keeping it clear of replication seeds.
pub const REFERENCE_SEED_OFFSET: u64 = 1 << 40;
/// Allowed excess of an empirical frequency over its bound, in binomial standard errors.
pub const FLAG_STANDARD_ERRORS: f64 = 3.0;

pub const REPORT_HEADER: &str = "x,empirical_C,bound_lemma61,empirical_eps,bound_prop64,flag";

fn check_indices(p: usize, set: &[usize]) -> Result<()> {
    if set.is_empty() {
        return arg_err("index set is empty");
    }
    for (pos, &i) in set.iter().enumerate() {
        if i >= p {
            return arg_err(format!("index {i} out of range for a {p}×{p} matrix"));
        }
        if set[..pos].contains(&i) {
            return arg_err(format!("index {i} repeated"));
        }
    }
    Ok(())
}

fn principal(c: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| c[(rows[a], cols[b])])
}

/// Smallest eigenvalue of the principal submatrix `C^{SS}`.
pub fn min_eig_active(c: &DMatrix<f64>, support: &[usize]) -> Result<f64> {
    if c.nrows() != c.ncols() {
        return arg_err("matrix must be square");
    }
    check_indices(c.nrows(), support)?;
    Ok(principal(c, support, support).symmetric_eigenvalues().min())
}

/// Adaptive irrepresentability constant
/// `κ̂ = max_{j∉S} |η_j| · |(C^{S^C S} (C^{SS})⁻¹ u)_j|` with
/// `u_j = sign(η_j)/|η_j|` on `S`. The condition holds iff `κ̂ < 1`.
pub fn irrepresentable_check(c: &DMatrix<f64>, support: &[usize], eta0: &DVector<f64>) -> Result<f64> {
    let p = c.nrows();
    if c.ncols() != p || eta0.len() != p {
        return arg_err("matrix and η0 dimensions disagree");
    }
    check_indices(p, support)?;
    if support.iter().any(|&j| eta0[j] == 0.0) {
        return arg_err("η0 must be nonzero on the support");
    }
    let off: Vec<usize> = (0..p).filter(|j| !support.contains(j)).collect();
    if off.is_empty() {
        return Ok(0.0);
    }
    let u = DVector::from_iterator(support.len(), support.iter().map(|&j| eta0[j].signum() / eta0[j].abs()));
    let chol = principal(c, support, support)
        .cholesky()
        .ok_or(DriftError::SingularInformation)?;
    let v = principal(c, &off, support) * chol.solve(&u);
    Ok(off
        .iter()
        .zip(v.iter())
        .map(|(&j, vj)| eta0[j].abs() * vj.abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationRow {
    pub x: f64,
    pub empirical_c: f64,
    pub bound_gram: f64,
    pub empirical_eps: f64,
    pub bound_martingale: f64,
    pub flag: bool,
}

#[derive(Clone, Debug)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
    /// Concentration constant `K = ‖Q‖`.
    pub k: f64,
    /// `max_j Ĉ_∞^{jj}`.
    pub m_hat: f64,
    /// Long-run estimate of `C_∞`.
    pub c_inf: DMatrix<f64>,
    /// Gram entry with the largest observed deviation.
    pub entry: (usize, usize),
    /// Martingale coordinate with the largest observed magnitude.
    pub eps_coord: usize,
    pub reps: usize,
    pub horizon: f64,
}

impl ConcentrationReport {
    pub fn n_flags(&self) -> usize {
        self.rows.iter().filter(|r| r.flag).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.x, r.empirical_c, r.bound_gram, r.empirical_eps, r.bound_martingale, r.flag
            )?;
        }
        Ok(())
    }
}

/// Gram-matrix tail bound `6 exp(−T x² / (36 K))`.
pub fn gram_tail_bound(x: f64, horizon: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return if x > 0.0 { 0.0 } else { 6.0 };
    }
    6.0 * (-horizon * x * x / (36.0 * k)).exp()
}

/// Martingale tail bound `2 exp(−T x² / (2(√K + M))) + 6 exp(−T/36)`.
pub fn martingale_tail_bound(x: f64, horizon: f64, k: f64, m: f64) -> f64 {
    let scale = 2.0 * (k.sqrt() + m);
    let first = if scale > 0.0 { 2.0 * (-horizon * x * x / scale).exp() } else if x > 0.0 { 0.0 } else { 2.0 };
    first + 6.0 * (-horizon / 36.0).exp()
}

fn exceeds(freq: f64, bound: f64, reps: usize) -> bool {
    let b = bound.min(1.0);
    let se = (b * (1.0 - b) / reps as f64).sqrt();
    freq > b + FLAG_STANDARD_ERRORS * se
}

/// Monte Carlo comparison of empirical tail frequencies with the
/// concentration bounds. Replication `r` uses seed `cfg.seed + r`.
pub fn concentration_check(
    dict: &DriftDictionary,
    theta0: &[f64],
    cfg: &SimConfig,
    reps: usize,
    x_grid: &[f64],
) -> Result<ConcentrationReport> {
    if reps < 100 {
        return arg_err(format!("concentration check needs at least 100 replications (got {reps})"));
    }
    if x_grid.is_empty() || x_grid.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return arg_err("x grid must be a nonempty list of finite values ≥ 0");
    }
    let lip = dict.lipschitz_matrix()?;
    let p = dict.n_params();
    let horizon = cfg.horizon;

    let reference_cfg = SimConfig {
        horizon: REFERENCE_HORIZON_FACTOR * horizon,
        seed: cfg.seed.wrapping_add(REFERENCE_SEED_OFFSET),
        record_noise: false,
        ..cfg.clone()
    };
    let reference = compute_stats(&simulate_path(dict, theta0, &reference_cfg)?, dict)?;
    let c_inf = reference.c;
    let m_hat = (0..p).map(|j| c_inf[(j, j)]).fold(f64::NEG_INFINITY, f64::max);

    let runs: Vec<(DMatrix<f64>, DVector<f64>)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rcfg = SimConfig { seed: cfg.seed.wrapping_add(r), record_noise: true, ..cfg.clone() };
            let path = simulate_path(dict, theta0, &rcfg)?;
            let stats = compute_stats(&path, dict)?;
            let noise = compute_noise_term(&path, dict)?;
            Ok((stats.c, noise.eps))
        })
        .collect::<Result<_>>()?;

    let mut entry = (0, 0);
    let mut worst = -1.0;
    for i in 0..p {
        for j in i..p {
            let dev = runs.iter().map(|(c, _)| (c[(i, j)] - c_inf[(i, j)]).abs()).fold(0.0, f64::max);
            if dev > worst {
                worst = dev;
                entry = (i, j);
            }
        }
    }
    let mut eps_coord = 0;
    let mut worst_eps = -1.0;
    for j in 0..p {
        let dev = runs.iter().map(|(_, e)| e[j].abs()).fold(0.0, f64::max);
        if dev > worst_eps {
            worst_eps = dev;
            eps_coord = j;
        }
    }
    let c_devs: Vec<f64> = runs.iter().map(|(c, _)| (c[entry] - c_inf[entry]).abs()).collect();
    let eps_devs: Vec<f64> = runs.iter().map(|(_, e)| e[eps_coord].abs()).collect();

    let mut xs = x_grid.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let freq = |devs: &[f64], x: f64| devs.iter().filter(|&&v| v >= x).count() as f64 / reps as f64;
    let rows = xs
        .into_iter()
        .map(|x| {
            let empirical_c = freq(&c_devs, x);
            let empirical_eps = freq(&eps_devs, x);
            let bound_gram = gram_tail_bound(x, horizon, lip.k);
            let bound_martingale = martingale_tail_bound(x, horizon, lip.k, m_hat);
            let flag = exceeds(empirical_c, bound_gram, reps) || exceeds(empirical_eps, bound_martingale, reps);
            ConcentrationRow { x, empirical_c, bound_gram, empirical_eps, bound_martingale, flag }
        })
        .collect();

    Ok(ConcentrationReport { rows, k: lip.k, m_hat, c_inf, entry, eps_coord, reps, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Largest eigenvalue by power iteration; used as an independent oracle.
    fn power_iteration(a: &DMatrix<f64>) -> f64 {
        let mut v = DVector::from_fn(a.nrows(), |i, _| 1.0 + i as f64 * 0.1);
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = a * &v;
            let norm = w.norm();
            v = w / norm;
            let next = v.dot(&(a * &v));
            if (next - lambda).abs() < 1e-15 * next.abs() {
                return next;
            }
            lambda = next;
        }
        lambda
    }

    #[test]
    fn min_eig_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((min_eig_active(&id, &[0, 2]).unwrap() - 1.0).abs() < 1e-14);
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5]));
        assert!((min_eig_active(&c, &[1]).unwrap() - 0.5).abs() < 1e-14);
        assert!(min_eig_active(&c, &[2]).is_err());
        assert!(min_eig_active(&c, &[]).is_err());
    }

    #[test]
    fn min_eig_matches_power_iteration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = 6;
            let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            let c = &a * a.transpose() + DMatrix::identity(p, p) * 0.3;
            let s = [0usize, 2, 3, 5];
            let sub = principal(&c, &s, &s);
            // smallest eigenvalue of sub = shift − largest eigenvalue of (shift·I − sub)
            let shift = sub.norm() + 1.0;
            let flipped = DMatrix::identity(4, 4) * shift - &sub;
            let oracle = shift - power_iteration(&flipped);
            assert!((min_eig_active(&c, &s).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn full_support_min_eig_is_global() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let global = c.clone().symmetric_eigenvalues().min();
        assert!((min_eig_active(&c, &[0, 1, 2]).unwrap() - global).abs() < 1e-14);
    }

    #[test]
    fn irrepresentable_examples() {
        let mut c = DMatrix::<f64>::identity(4, 4);
        c[(0, 1)] = 0.3;
        c[(1, 0)] = 0.3;
        let eta = DVector::from_vec(vec![1.0, 2.0, 5.0, -3.0]);
        assert_eq!(irrepresentable_check(&c, &[0, 1], &eta).unwrap(), 0.0);

        let rho = 0.4;
        let c2 = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let k = irrepresentable_check(&c2, &[0], &DVector::from_vec(vec![1.0, rho])).unwrap();
        assert!((k - rho * rho).abs() < 1e-15);
    }

    #[test]
    fn irrepresentable_is_scale_invariant() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.5, 0.3, 1.0, 0.2, 0.5, 0.2, 1.5]);
        let eta = DVector::from_vec(vec![1.5, -0.7, 0.4]);
        let base = irrepresentable_check(&c, &[0, 1], &eta).unwrap();
        let scaled = irrepresentable_check(&c, &[0, 1], &(&eta * 3.7)).unwrap();
        assert!((base - scaled).abs() < 1e-12 * base);
    }

    #[test]
    fn irrepresentable_errors() {
        let c = DMatrix::from_element(2, 2, 1.0);
        let eta = DVector::from_vec(vec![1.0, 1.0]);
        let mut c3 = DMatrix::<f64>::zeros(3, 3);
        c3[(2, 2)] = 1.0;
        assert!(matches!(
            irrepresentable_check(&c3, &[0, 1], &DVector::from_vec(vec![1.0, 1.0, 0.0])),
            Err(DriftError::SingularInformation)
        ));
        assert!(irrepresentable_check(&c, &[0], &DVector::from_vec(vec![0.0, 1.0])).is_err());
        assert_eq!(irrepresentable_check(&c, &[0, 1], &eta).unwrap(), 0.0);
    }

    #[test]
    fn bounds_decrease_and_are_vacuous_at_zero() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        for w in xs.windows(2) {
            assert!(gram_tail_bound(w[1], 20.0, 4.0) < gram_tail_bound(w[0], 20.0, 4.0));
            assert!(martingale_tail_bound(w[1], 20.0, 4.0, 0.5) < martingale_tail_bound(w[0], 20.0, 4.0, 0.5));
        }
        assert_eq!(gram_tail_bound(0.0, 20.0, 4.0), 6.0);
    }

    #[test]
    fn concentration_report_shape() {
        let dict = DriftDictionary::cosine(1, 2, 1.0).unwrap();
        let cfg = SimConfig::new(5.0, 0.05, 3);
        let xs = [0.0, 0.1, 0.5, 0.2];
        let rep = concentration_check(&dict, &[1.0, 0.0], &cfg, 100, &xs).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.rows.windows(2).all(|w| w[0].x < w[1].x));
        assert!(rep.rows.windows(2).all(|w| w[1].empirical_c <= w[0].empirical_c));
        assert!(rep.rows.windows(2).all(|w| w[1].empirical_eps <= w[0].empirical_eps));
        assert_eq!(rep.rows[0].empirical_c, 1.0);
        assert_eq!(rep.n_flags(), 0);

        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(REPORT_HEADER));

        let ou = DriftDictionary::linear_ou(1, 1).unwrap();
        assert!(matches!(
            concentration_check(&ou, &[1.0], &cfg, 100, &xs),
            Err(DriftError::UnsupportedBasis(_))
        ));
        assert!(concentration_check(&dict, &[1.0, 0.0], &cfg, 10, &xs).is_err());
    }
}
