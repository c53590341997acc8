//! λ grids and contiguous-block cross-validation.
//!
//! The path is cut into `K` contiguous blocks. Statistics are additive over
//! time blocks, so the training statistics of a fold are the T-weighted
//! combination of the other blocks' statistics, and each block is reduced
//! only once. The validation score is the held-out negative log-likelihood.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dictionary::DriftDictionary;
use crate::error::{arg_err, DriftError, Result};
use crate::estimate::{adaptive_weights, lasso_from};
use crate::simulate::Trajectory;
use crate::solvers::{lambda_max, weighted_lasso_from, Fit, Method, SolveOptions};
use crate::stats::{block_stats, compute_stats, neg_loglik, SuffStats};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_SIZE: usize = 40;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    /// Descending λ values.
    pub grid: Vec<f64>,
    /// Mean validation negative log-likelihood per grid point.
    pub scores: Vec<f64>,
    pub best_lambda: f64,
    pub fold_count: usize,
    /// Folds dropped because their training statistics were degenerate.
    pub skipped_folds: usize,
}

impl CvResult {
    pub fn best_index(&self) -> usize {
        self.grid.iter().position(|&l| l == self.best_lambda).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub grid_size: usize,
    pub grid_ratio: f64,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: DEFAULT_FOLDS, grid_size: DEFAULT_GRID_SIZE, grid_ratio: DEFAULT_GRID_RATIO }
    }
}

/// How the adaptive Lasso obtains its pre-estimate inside each training set.
#[derive(Clone, Debug, PartialEq)]
pub enum PreRule {
    /// Lasso tuned by an inner block CV on the training blocks only.
    CvLasso { grid_size: usize, grid_ratio: f64 },
    /// The marginal estimator of the training blocks.
    Marginal,
    /// A fixed pre-estimate shared by all folds.
    Fixed(DVector<f64>),
}

impl PreRule {
    pub fn cv_lasso(settings: &CvSettings) -> Self {
        PreRule::CvLasso { grid_size: settings.grid_size, grid_ratio: settings.grid_ratio }
    }
}

/// Geometric grid from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_grid(stats: &SuffStats, weights: &DVector<f64>, n_grid: usize, ratio: f64) -> Result<Vec<f64>> {
    if n_grid < 2 {
        return arg_err(format!("grid size must be at least 2 (got {n_grid})"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return arg_err(format!("grid ratio must lie in (0, 1) (got {ratio})"));
    }
    let top = lambda_max(stats, weights)?;
    if !(top > 0.0) || !top.is_finite() {
        return Err(DriftError::Numeric(format!("lambda_max = {top} cannot anchor a geometric grid")));
    }
    let step = ratio.ln() / (n_grid - 1) as f64;
    let mut grid: Vec<f64> = (0..n_grid).map(|i| top * (step * i as f64).exp()).collect();
    grid[0] = top;
    grid[n_grid - 1] = top * ratio;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return arg_err("empty λ grid");
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return arg_err("λ grid values must be finite and ≥ 0");
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return arg_err("λ grid must be strictly decreasing");
    }
    Ok(())
}

/// Fits a weighted Lasso along a descending grid with warm starts.
fn path_fits(stats: &SuffStats, grid: &[f64], weights: &DVector<f64>, opts: &SolveOptions) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in grid {
        let fit = weighted_lasso_from(stats, lambda, weights, opts, warm.as_ref())?;
        warm = Some(fit.theta.clone());
        out.push(fit.theta);
    }
    Ok(out)
}

/// Index of the smallest score; the earliest (largest λ) wins ties.
fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Cross-validation over precomputed pieces. `folds[f]` lists the pieces
/// held out in fold `f`; `fit_path` maps training statistics (and the
/// training piece indices) to one estimate per grid point.
fn cv_over_pieces<F>(pieces: &[SuffStats], folds: &[Vec<usize>], grid: &[f64], fit_path: F) -> Result<CvResult>
where
    F: Fn(&SuffStats, &[usize]) -> Result<Vec<DVector<f64>>> + Sync,
{
    let per_fold: Vec<Option<Vec<f64>>> = folds
        .par_iter()
        .map(|held| {
            let train_idx: Vec<usize> = (0..pieces.len()).filter(|i| !held.contains(i)).collect();
            let train = SuffStats::combine(train_idx.iter().map(|&i| &pieces[i])).ok()?;
            let valid = SuffStats::combine(held.iter().map(|&i| &pieces[i])).ok()?;
            let thetas = fit_path(&train, &train_idx).ok()?;
            thetas.iter().map(|t| neg_loglik(&valid, t).ok().filter(|v| v.is_finite())).collect()
        })
        .collect();

    let used: Vec<&Vec<f64>> = per_fold.iter().flatten().collect();
    if used.is_empty() {
        return Err(DriftError::CvFailed("every fold had degenerate training statistics".into()));
    }
    let scores: Vec<f64> = (0..grid.len())
        .map(|i| used.iter().map(|s| s[i]).sum::<f64>() / used.len() as f64)
        .collect();
    let best = argmin_first(&scores);
    Ok(CvResult {
        grid: grid.to_vec(),
        scores,
        best_lambda: grid[best],
        fold_count: folds.len(),
        skipped_folds: per_fold.len() - used.len(),
    })
}

fn inner_pre_estimate(
    pieces: &[SuffStats],
    train_idx: &[usize],
    pair_groups: bool,
    grid_size: usize,
    grid_ratio: f64,
    opts: &SolveOptions,
) -> Result<DVector<f64>> {
    // Sub-blocks of one outer block stay together as an inner fold when
    // enough outer blocks remain; otherwise each sub-block is its own fold.
    let local: Vec<SuffStats> = train_idx.iter().map(|&i| pieces[i].clone()).collect();
    let folds: Vec<Vec<usize>> = if pair_groups {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (pos, &i) in train_idx.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if train_idx[g[0]] / 2 == i / 2 => g.push(pos),
                _ => groups.push(vec![pos]),
            }
        }
        groups
    } else {
        (0..local.len()).map(|i| vec![i]).collect()
    };
    let train = SuffStats::combine(&local)?;
    let ones = DVector::from_element(train.n_params(), 1.0);
    let grid = lambda_grid(&train, &ones, grid_size, grid_ratio)?;
    let inner = cv_over_pieces(&local, &folds, &grid, |s, _| path_fits(s, &grid, &ones, opts))?;
    Ok(lasso_from(&train, inner.best_lambda, opts, None)?.theta)
}

/// Block cross-validation of the Lasso or adaptive Lasso penalty.
pub fn block_cv(
    traj: &Trajectory,
    dict: &DriftDictionary,
    method: Method,
    grid: &[f64],
    k: usize,
    pre: &PreRule,
    opts: &SolveOptions,
) -> Result<CvResult> {
    validate_grid(grid)?;
    if k < 2 {
        return arg_err(format!("cross-validation needs at least 2 folds (got {k})"));
    }
    if traj.len() < 2 * k {
        return arg_err(format!("{} grid points cannot form {k} folds (need at least {})", traj.len(), 2 * k));
    }
    let p = dict.n_params();
    match method {
        Method::Lasso => {
            let pieces = block_stats(traj, dict, k)?;
            let folds: Vec<Vec<usize>> = (0..k).map(|f| vec![f]).collect();
            let ones = DVector::from_element(p, 1.0);
            cv_over_pieces(&pieces, &folds, grid, |s, _| path_fits(s, grid, &ones, opts))
        }
        Method::AdaptiveLasso => match pre {
            PreRule::CvLasso { grid_size, grid_ratio } => {
                if traj.n_steps() < 2 * k {
                    return arg_err("path too short for nested pre-estimator cross-validation");
                }
                let pieces = block_stats(traj, dict, 2 * k)?;
                let folds: Vec<Vec<usize>> = (0..k).map(|f| vec![2 * f, 2 * f + 1]).collect();
                let pair_groups = k >= 3;
                cv_over_pieces(&pieces, &folds, grid, |train, idx| {
                    let pre = inner_pre_estimate(&pieces, idx, pair_groups, *grid_size, *grid_ratio, opts)?;
                    path_fits(train, grid, &adaptive_weights(&pre)?, opts)
                })
            }
            PreRule::Marginal => {
                let pieces = block_stats(traj, dict, k)?;
                let folds: Vec<Vec<usize>> = (0..k).map(|f| vec![f]).collect();
                cv_over_pieces(&pieces, &folds, grid, |train, _| {
                    path_fits(train, grid, &adaptive_weights(&train.m)?, opts)
                })
            }
            PreRule::Fixed(theta) => {
                if theta.len() != p {
                    return arg_err("fixed pre-estimate has the wrong length");
                }
                let weights = adaptive_weights(theta)?;
                let pieces = block_stats(traj, dict, k)?;
                let folds: Vec<Vec<usize>> = (0..k).map(|f| vec![f]).collect();
                cv_over_pieces(&pieces, &folds, grid, |train, _| path_fits(train, grid, &weights, opts))
            }
        },
        other => arg_err(format!("cross-validation applies to Lasso and AdaptiveLasso, not {other}")),
    }
}

/// CV-tuned Lasso on the full path: returns the CV record and the refit.
pub fn cv_lasso(
    traj: &Trajectory,
    dict: &DriftDictionary,
    settings: &CvSettings,
    opts: &SolveOptions,
) -> Result<(CvResult, Fit)> {
    let stats = compute_stats(traj, dict)?;
    cv_lasso_with_stats(traj, dict, &stats, settings, opts)
}

pub fn cv_lasso_with_stats(
    traj: &Trajectory,
    dict: &DriftDictionary,
    stats: &SuffStats,
    settings: &CvSettings,
    opts: &SolveOptions,
) -> Result<(CvResult, Fit)> {
    let ones = DVector::from_element(stats.n_params(), 1.0);
    let grid = lambda_grid(stats, &ones, settings.grid_size, settings.grid_ratio)?;
    let cv = block_cv(traj, dict, Method::Lasso, &grid, settings.folds, &PreRule::Marginal, opts)?;
    let fit = lasso_from(stats, cv.best_lambda, opts, None)?;
    Ok((cv, fit))
}

/// CV-tuned adaptive Lasso with weights from `full_pre` on the full path.
/// The grid is anchored at the full-data `lambda_max` for those weights.
pub fn cv_adaptive_lasso_with_stats(
    traj: &Trajectory,
    dict: &DriftDictionary,
    stats: &SuffStats,
    full_pre: &Fit,
    rule: &PreRule,
    settings: &CvSettings,
    opts: &SolveOptions,
) -> Result<(CvResult, Fit)> {
    let weights = adaptive_weights(&full_pre.theta)?;
    let grid = lambda_grid(stats, &weights, settings.grid_size, settings.grid_ratio)?;
    let cv = block_cv(traj, dict, Method::AdaptiveLasso, &grid, settings.folds, rule, opts)?;
    let fit = crate::estimate::adaptive_lasso(stats, cv.best_lambda, full_pre, opts)?;
    Ok((cv, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_path, SimConfig};
    use nalgebra::DMatrix;

    #[test]
    fn geometric_grid_examples() {
        let g = DVector::from_vec(vec![-2.0, 1.0]);
        let s = SuffStats::new(DMatrix::identity(2, 2), g.clone(), -g, 1.0).unwrap();
        let ones = DVector::from_element(2, 1.0);
        let grid = lambda_grid(&s, &ones, 3, 0.01).unwrap();
        assert_eq!(grid[0], 2.0);
        assert!((grid[1] - 0.2).abs() < 1e-15);
        assert!((grid[2] - 0.02).abs() < 1e-15);
        let two = lambda_grid(&s, &ones, 2, 0.5).unwrap();
        assert_eq!(two, vec![2.0, 1.0]);
        assert!(lambda_grid(&s, &ones, 1, 0.5).is_err());
        assert!(lambda_grid(&s, &ones, 4, 1.0).is_err());
    }

    #[test]
    fn argmin_prefers_larger_lambda_on_ties() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(argmin_first(&[5.0, 4.0, 3.0, 2.5, 4.0]), 3);
    }

    #[test]
    fn strictly_convex_scores_pick_their_minimum() {
        // validation pieces are copies of the training piece, so the score is
        // the in-sample curve, convex along the path with its minimum at λ = 0
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let g = DVector::from_vec(vec![-1.0, 0.5]);
        let piece = SuffStats::new(c, g.clone(), -g, 1.0).unwrap();
        let pieces = vec![piece.clone(), piece];
        let folds = vec![vec![0], vec![1]];
        let grid = vec![2.0, 1.0, 0.5, 0.0];
        let ones = DVector::from_element(2, 1.0);
        let opts = SolveOptions::default();
        let cv = cv_over_pieces(&pieces, &folds, &grid, |s, _| path_fits(s, &grid, &ones, &opts)).unwrap();
        assert_eq!(cv.best_lambda, 0.0);
        assert!(cv.scores.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cv_on_simulated_path() {
        let dict = DriftDictionary::cosine(2, 6, 6.0).unwrap();
        let theta0 = [2.5, 0.0, 0.0, 2.0, 0.0, 0.0];
        let path = simulate_path(&dict, &theta0, &SimConfig::new(20.0, 0.05, 4)).unwrap();
        let settings = CvSettings { folds: 4, grid_size: 12, grid_ratio: 1e-2 };
        let opts = SolveOptions::default();
        let (cv, fit) = cv_lasso(&path, &dict, &settings, &opts).unwrap();
        assert_eq!(cv.scores.len(), 12);
        assert!(cv.grid.contains(&cv.best_lambda));
        assert_eq!(cv.skipped_folds, 0);
        assert_eq!(fit.lambda, cv.best_lambda);

        let stats = compute_stats(&path, &dict).unwrap();
        for rule in [PreRule::cv_lasso(&settings), PreRule::Marginal, PreRule::Fixed(fit.theta.clone())] {
            let (acv, afit) = cv_adaptive_lasso_with_stats(&path, &dict, &stats, &fit, &rule, &settings, &opts).unwrap();
            assert!(acv.scores.iter().all(|s| s.is_finite()));
            assert_eq!(afit.method, Method::AdaptiveLasso);
        }
    }

    #[test]
    fn weight_scaling_moves_the_selected_lambda_with_the_grid() {
        let dict = DriftDictionary::cosine(2, 6, 6.0).unwrap();
        let theta0 = [2.5, 0.0, 0.0, 2.0, 0.0, 0.0];
        let path = simulate_path(&dict, &theta0, &SimConfig::new(20.0, 0.05, 8)).unwrap();
        let stats = compute_stats(&path, &dict).unwrap();
        let opts = SolveOptions::default();
        let pre = DVector::from_vec(vec![2.0, 0.3, -0.1, 1.5, 0.05, -0.2]);
        let grid = lambda_grid(&stats, &adaptive_weights(&pre).unwrap(), 10, 1e-2).unwrap();
        let base = block_cv(&path, &dict, Method::AdaptiveLasso, &grid, 4, &PreRule::Fixed(pre.clone()), &opts).unwrap();
        for c in [0.25, 3.0, 40.0] {
            // weights 1/|θ̃| scale by c when θ̃ scales by 1/c
            let scaled_grid: Vec<f64> = grid.iter().map(|l| l / c).collect();
            let rule = PreRule::Fixed(&pre / c);
            let cv = block_cv(&path, &dict, Method::AdaptiveLasso, &scaled_grid, 4, &rule, &opts).unwrap();
            assert_eq!(cv.best_index(), base.best_index());
            for (a, b) in cv.scores.iter().zip(&base.scores) {
                assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn invalid_cv_requests() {
        let dict = DriftDictionary::cosine(1, 2, 2.0).unwrap();
        let path = simulate_path(&dict, &[1.0, 0.0], &SimConfig::new(0.3, 0.05, 1)).unwrap();
        let opts = SolveOptions::default();
        let grid = [1.0, 0.1];
        assert!(block_cv(&path, &dict, Method::Lasso, &grid, 1, &PreRule::Marginal, &opts).is_err());
        assert!(block_cv(&path, &dict, Method::Lasso, &grid, 5, &PreRule::Marginal, &opts).is_err());
        assert!(block_cv(&path, &dict, Method::Mle, &grid, 2, &PreRule::Marginal, &opts).is_err());
        assert!(block_cv(&path, &dict, Method::Lasso, &[0.1, 1.0], 2, &PreRule::Marginal, &opts).is_err());
    }
}
