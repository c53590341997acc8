//! Declarative Monte Carlo experiments with flat CSV output.
//!
//! Replication `r` at axis index `a` uses seed `base_seed + a·10⁶ + r` for
//! both the simulated path and (on a separate stream) the drawn θ0, so any
//! single cell of a sweep can be reproduced in isolation.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{concentration_check, irrepresentable_check, min_eig_active, ConcentrationReport};
use crate::dictionary::{DictionaryKind, DriftDictionary};
use crate::error::{arg_err, DriftError, Result};
use crate::estimate::{adaptive_lasso, lasso, marginal, mle};
use crate::evaluate::{an_statistic, lp_errors, sign_consistent, support_errors, MetricRow, DEFAULT_ZERO_TOL, METRIC_HEADER};
use crate::simulate::{simulate_path, SimConfig, Trajectory, DEFAULT_BURN_IN};
use crate::solvers::{Fit, Method, SolveOptions};
use crate::stats::{compute_stats, SuffStats};
use crate::tune::{cv_adaptive_lasso_with_stats, cv_lasso_with_stats, CvSettings, PreRule};

/// Seed spacing between consecutive points of the swept axis.
pub const AXIS_SEED_STRIDE: u64 = 1_000_000;

pub const RESULTS_FILE: &str = "results.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const CONCENTRATION_FILE: &str = "concentration.csv";
pub const ASSUMPTIONS_FILE: &str = "assumptions.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Heatmap,
    SupportCurve,
    ErrorCurve,
    Normality,
    Diagnostics,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Heatmap => "heatmap",
            ExperimentKind::SupportCurve => "support_curve",
            ExperimentKind::ErrorCurve => "error_curve",
            ExperimentKind::Normality => "normality",
            ExperimentKind::Diagnostics => "diagnostics",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "heatmap" => Ok(ExperimentKind::Heatmap),
            "support_curve" | "supportcurve" => Ok(ExperimentKind::SupportCurve),
            "error_curve" | "errorcurve" => Ok(ExperimentKind::ErrorCurve),
            "normality" => Ok(ExperimentKind::Normality),
            "diagnostics" => Ok(ExperimentKind::Diagnostics),
            other => arg_err(format!("unknown experiment kind `{other}`")),
        }
    }
}

/// Sign pattern of the drawn nonzero coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SignRule {
    #[default]
    Positive,
    Random,
}

impl FromStr for SignRule {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(SignRule::Positive),
            "random" => Ok(SignRule::Random),
            other => arg_err(format!("unknown sign rule `{other}` (expected positive or random)")),
        }
    }
}

/// Coefficient of the known drift part `φ0(x) = c·x`, either fixed or a
/// multiple of the sparsity `s` of the current θ0 (written `3s`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseCoeff {
    Fixed(f64),
    PerNonzero(f64),
}

impl BaseCoeff {
    pub fn resolve(self, s: usize) -> f64 {
        match self {
            BaseCoeff::Fixed(c) => c,
            BaseCoeff::PerNonzero(c) => c * s as f64,
        }
    }
}

impl Default for BaseCoeff {
    fn default() -> Self {
        BaseCoeff::PerNonzero(3.0)
    }
}

impl FromStr for BaseCoeff {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (num, per) = match t.strip_suffix('s') {
            Some(rest) => (rest.trim(), true),
            None => (t, false),
        };
        let v = if per && num.is_empty() { 1.0 } else { parse_f64(num)? };
        if !v.is_finite() {
            return arg_err(format!("base coefficient `{t}` is not finite"));
        }
        Ok(if per { BaseCoeff::PerNonzero(v) } else { BaseCoeff::Fixed(v) })
    }
}

/// Pre-estimator feeding the adaptive Lasso weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PreChoice {
    #[default]
    Lasso,
    Marginal,
}

impl FromStr for PreChoice {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lasso" => Ok(PreChoice::Lasso),
            "marginal" => Ok(PreChoice::Marginal),
            other => arg_err(format!("unknown pre-estimator `{other}` (expected lasso or marginal)")),
        }
    }
}

/// The swept axis: horizons at fixed `p`, or dimensions at fixed `T`.
#[derive(Clone, Debug, PartialEq)]
pub enum Axis {
    Horizon(Vec<f64>),
    Params(Vec<usize>),
}

impl Axis {
    pub fn len(&self) -> usize {
        match self {
            Axis::Horizon(v) => v.len(),
            Axis::Params(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, a: usize) -> f64 {
        match self {
            Axis::Horizon(v) => v[a],
            Axis::Params(v) => v[a] as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dict: DictionaryKind,
    pub d: usize,
    pub p: usize,
    pub base_coeff: BaseCoeff,
    /// Fraction of zero coordinates in θ0.
    pub sparsity: f64,
    pub nonzero_low: f64,
    pub nonzero_high: f64,
    pub signs: SignRule,
    /// Horizon used when the axis sweeps `p`.
    pub horizon: f64,
    pub axis: Axis,
    pub reps: usize,
    pub dt: f64,
    pub burn_in: f64,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    pub cv: CvSettings,
    /// Fixed penalty; `None` selects λ by block cross-validation.
    pub lambda: Option<f64>,
    pub pre: PreChoice,
    pub zero_tol: f64,
    /// Explicit θ0 shared by every replication, overriding the random draw.
    pub theta0: Option<Vec<f64>>,
    /// Deviation grid for the concentration diagnostics.
    pub x_grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            dict: DictionaryKind::Cosine,
            d: 5,
            p: 30,
            base_coeff: BaseCoeff::default(),
            sparsity: 0.8,
            nonzero_low: 2.0,
            nonzero_high: 3.0,
            signs: SignRule::Positive,
            horizon: 10.0,
            axis: Axis::Horizon(vec![10.0]),
            reps: 25,
            dt: 0.05,
            burn_in: DEFAULT_BURN_IN,
            base_seed: 0,
            methods: vec![Method::Mle, Method::Lasso, Method::AdaptiveLasso],
            cv: CvSettings::default(),
            lambda: None,
            pre: PreChoice::Lasso,
            zero_tol: DEFAULT_ZERO_TOL,
            theta0: None,
            x_grid: (0..=40).map(|i| i as f64 * 0.125).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis.is_empty() {
            return arg_err("swept axis is empty");
        }
        if self.reps == 0 {
            return arg_err("reps must be at least 1");
        }
        if self.d == 0 || self.p == 0 {
            return arg_err("d and p must be positive");
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return arg_err(format!("sparsity must lie in [0, 1) (got {})", self.sparsity));
        }
        if !(self.nonzero_low <= self.nonzero_high) || !self.nonzero_low.is_finite() || !self.nonzero_high.is_finite() {
            return arg_err("nonzero_low must not exceed nonzero_high");
        }
        if !(self.dt > 0.0) || !(self.burn_in >= 0.0) || !(self.horizon > 0.0) {
            return arg_err("dt and T must be positive and burn_in nonnegative");
        }
        if self.methods.is_empty() {
            return arg_err("no methods requested");
        }
        if let Some(m) = self.methods.iter().find(|m| matches!(m, Method::Marginal)) {
            return arg_err(format!("method {m} is a pre-estimator, not an experiment method"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return arg_err("lambda must be finite and nonnegative");
            }
        }
        match &self.axis {
            Axis::Horizon(v) if v.iter().any(|t| !(*t > 0.0) || !t.is_finite()) => {
                return arg_err("T values must be positive")
            }
            Axis::Params(v) if v.contains(&0) => return arg_err("p values must be positive"),
            _ => {}
        }
        if let Some(t) = &self.theta0 {
            if let Axis::Params(_) = self.axis {
                return arg_err("an explicit theta0 cannot be combined with a p sweep");
            }
            if t.len() != self.p {
                return arg_err(format!("theta0 has {} entries but p = {}", t.len(), self.p));
            }
        }
        if self.kind == ExperimentKind::Diagnostics {
            if !matches!(self.axis, Axis::Horizon(_)) {
                return arg_err("diagnostics sweep T values, not p values");
            }
            if self.x_grid.is_empty() {
                return arg_err("x_grid is empty");
            }
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `[section]` headers prefix the keys
    /// that follow (`[dict]` then `kind = cosine` is `dict.kind`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(DriftError::Config { line: line_no, msg: format!("unterminated section header `{line}`") });
                };
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DriftError::Config { line: line_no, msg: format!("expected `key = value`, found `{line}`") });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(DriftError::Config { line: line_no, msg: "missing key".into() });
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            entries.push((line_no, canonical_key(&full), value.trim().to_string()));
        }

        let Some((kind_line, _, kind)) = entries.iter().find(|(_, k, _)| k == "kind") else {
            return Err(DriftError::Config { line: 0, msg: "missing required key `kind`".into() });
        };
        let mut cfg = Self::new(ExperimentKind::from_str(kind).map_err(|e| at_line(*kind_line, e))?);
        let mut horizon_set = false;
        let mut seen: Vec<&str> = Vec::new();
        for (line, key, value) in &entries {
            if seen.contains(&key.as_str()) {
                return Err(DriftError::Config { line: *line, msg: format!("duplicate key `{key}`") });
            }
            seen.push(key);
            cfg.apply(key, value, &mut horizon_set).map_err(|e| at_line(*line, e))?;
        }
        let line_of = |key: &str| entries.iter().find(|(_, k, _)| k == key).map(|e| e.0);
        match (line_of("t_values"), line_of("p_values")) {
            (Some(a), Some(b)) => {
                return Err(DriftError::Config { line: a.max(b), msg: "T_values and p_values are mutually exclusive".into() })
            }
            (None, None) if horizon_set => cfg.axis = Axis::Horizon(vec![cfg.horizon]),
            _ => {}
        }
        cfg.validate().map_err(|e| at_line(0, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str, horizon_set: &mut bool) -> Result<()> {
        match key {
            "kind" => {}
            "dict" => self.dict = value.parse()?,
            "d" => self.d = parse_usize(value)?,
            "p" => self.p = parse_usize(value)?,
            "base_coeff" => self.base_coeff = value.parse()?,
            "sparsity" => self.sparsity = parse_f64(value)?,
            "nonzero_low" => self.nonzero_low = parse_f64(value)?,
            "nonzero_high" => self.nonzero_high = parse_f64(value)?,
            "signs" => self.signs = value.parse()?,
            "t" => {
                self.horizon = parse_f64(value)?;
                *horizon_set = true;
            }
            "t_values" => self.axis = Axis::Horizon(parse_list(value, parse_f64)?),
            "p_values" => self.axis = Axis::Params(parse_list(value, parse_usize)?),
            "reps" => self.reps = parse_usize(value)?,
            "dt" => self.dt = parse_f64(value)?,
            "burn_in" => self.burn_in = parse_f64(value)?,
            "base_seed" | "seed" => self.base_seed = value.parse().map_err(|_| bad_value("integer", value))?,
            "methods" => self.methods = parse_list(value, |s| s.parse())?,
            "cv_folds" => self.cv.folds = parse_usize(value)?,
            "grid_size" => self.cv.grid_size = parse_usize(value)?,
            "grid_ratio" => self.cv.grid_ratio = parse_f64(value)?,
            "lambda" => {
                self.lambda = match value.to_ascii_lowercase().as_str() {
                    "cv" | "" => None,
                    v => Some(parse_f64(v)?),
                }
            }
            "pre" => self.pre = value.parse()?,
            "zero_tol" => self.zero_tol = parse_f64(value)?,
            "theta0" => self.theta0 = Some(parse_list(value, parse_f64)?),
            "x_grid" => self.x_grid = parse_list(value, parse_f64)?,
            other => return arg_err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find(['#', ';']).unwrap_or(line.len());
    &line[..cut]
}

fn canonical_key(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase().replace('-', "_");
    match k.as_str() {
        "dict.kind" | "dictionary" | "dict_kind" => "dict".into(),
        "dict.d" => "d".into(),
        "dict.p" => "p".into(),
        "dict.base_coeff" => "base_coeff".into(),
        "cv.folds" | "folds" => "cv_folds".into(),
        "cv.grid_size" => "grid_size".into(),
        "cv.grid_ratio" => "grid_ratio".into(),
        "cv.lambda" => "lambda".into(),
        "cv.pre" => "pre".into(),
        "horizon" => "t".into(),
        _ => k.strip_prefix("experiment.").unwrap_or(&k).to_string(),
    }
}

fn at_line(line: usize, err: DriftError) -> DriftError {
    match err {
        DriftError::Argument(msg) | DriftError::Parse(msg) => DriftError::Config { line, msg },
        other => other,
    }
}

fn bad_value(what: &str, value: &str) -> DriftError {
    DriftError::Parse(format!("expected {what}, found `{value}`"))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| bad_value("a number", s))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| bad_value("a nonnegative integer", s))
}

/// Comma- or whitespace-separated list, optionally wrapped in brackets.
pub fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let inner = s.trim().trim_start_matches(['[', '{']).trim_end_matches([']', '}']);
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(item)
        .collect()
}

/// Builds the dictionary of an experiment. The linear dictionary has no
/// known drift part, so `base` is ignored for it.
pub fn build_dictionary(kind: DictionaryKind, d: usize, p: usize, base: f64) -> Result<DriftDictionary> {
    match kind {
        DictionaryKind::Cosine => DriftDictionary::cosine(d, p, base),
        DictionaryKind::LinearOu => DriftDictionary::linear_ou(d, p),
        DictionaryKind::Custom => arg_err("custom dictionaries cannot be built from a config"),
    }
}

/// Number of nonzero coordinates for a given fraction of zeros, rounding
/// halves to even.
pub fn nonzero_count(p: usize, sparsity: f64) -> usize {
    ((1.0 - sparsity) * p as f64).round_ties_even() as usize
}

/// Draws a sparse θ0 with magnitudes uniform on `[low, high]` at uniformly
/// chosen positions.
pub fn generate_theta<R: Rng + ?Sized>(
    p: usize,
    sparsity: f64,
    low: f64,
    high: f64,
    signs: SignRule,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&sparsity) {
        return arg_err(format!("sparsity must lie in [0, 1) (got {sparsity})"));
    }
    if !(low <= high) || !low.is_finite() || !high.is_finite() {
        return arg_err("need finite low ≤ high");
    }
    let s = nonzero_count(p, sparsity);
    if s == 0 {
        return Err(DriftError::DegenerateParameter(format!("p = {p} with sparsity {sparsity} leaves no nonzero coordinate")));
    }
    let mut theta = DVector::zeros(p);
    let mut positions = sample(rng, p, s).into_vec();
    positions.sort_unstable();
    for j in positions {
        let magnitude = rng.random_range(low..=high);
        let negative = signs == SignRule::Random && rng.random_bool(0.5);
        theta[j] = if negative { -magnitude } else { magnitude };
    }
    Ok(theta)
}

/// One record of the results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub kind: ExperimentKind,
    pub axis_value: f64,
    pub seed: u64,
    pub method: String,
    pub horizon: f64,
    pub p: usize,
    pub d: usize,
    pub metrics: Option<MetricRow>,
    pub error: Option<String>,
}

pub fn results_header() -> String {
    format!("kind,axis_value,{METRIC_HEADER},error")
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let body = match &self.metrics {
            Some(m) => m.csv_fields(),
            None => format!("{},{},{},{},{},,,,,,", self.seed, self.method, self.horizon, self.p, self.d),
        };
        let error = self.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        format!("{},{},{},{}", self.kind, self.axis_value, body, error)
    }
}

fn error_tag(e: &DriftError) -> String {
    let name = format!("{e:?}");
    let variant = name.split(['(', ' ', '{']).next().unwrap_or("Error").to_string();
    format!("{variant}: {e}")
}

/// Seed of replication `r` at axis index `a`.
pub fn replication_seed(base_seed: u64, a: usize, r: usize) -> u64 {
    base_seed.wrapping_add(a as u64 * AXIS_SEED_STRIDE).wrapping_add(r as u64)
}

/// θ0 for a replication, drawn from stream 1 of the replication seed.
pub fn replication_theta(cfg: &ExperimentConfig, p: usize, seed: u64) -> Result<DVector<f64>> {
    if let Some(t) = &cfg.theta0 {
        return Ok(DVector::from_column_slice(t));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    generate_theta(p, cfg.sparsity, cfg.nonzero_low, cfg.nonzero_high, cfg.signs, &mut rng)
}

struct Replication {
    rows: Vec<ResultRow>,
    theta0: Option<DVector<f64>>,
    fits: Vec<(Method, DVector<f64>)>,
}

/// Fits every requested method on one path's statistics.
#[allow(clippy::too_many_arguments)]
pub fn fit_methods(
    traj: &Trajectory,
    dict: &DriftDictionary,
    stats: &SuffStats,
    methods: &[Method],
    lambda: Option<f64>,
    pre: PreChoice,
    cv: &CvSettings,
    opts: &SolveOptions,
) -> Vec<(Method, Result<Fit>)> {
    let mut lasso_fit: Option<Result<Fit>> = None;
    let get_lasso = |cache: &mut Option<Result<Fit>>| -> Result<Fit> {
        let fit = cache.get_or_insert_with(|| match lambda {
            Some(l) => lasso(stats, l, opts),
            None => cv_lasso_with_stats(traj, dict, stats, cv, opts).map(|(_, f)| f),
        });
        match fit {
            Ok(f) => Ok(f.clone()),
            Err(e) => Err(DriftError::CvFailed(format!("Lasso stage failed: {e}"))),
        }
    };
    methods
        .iter()
        .map(|&m| {
            let fit = match m {
                Method::Mle => mle(stats),
                Method::Marginal => Ok(marginal(stats)),
                Method::Lasso => get_lasso(&mut lasso_fit),
                Method::AdaptiveLasso => {
                    let pre_fit = match pre {
                        PreChoice::Lasso => get_lasso(&mut lasso_fit),
                        PreChoice::Marginal => Ok(marginal(stats)),
                    };
                    pre_fit.and_then(|pf| match lambda {
                        Some(l) => adaptive_lasso(stats, l, &pf, opts),
                        None => {
                            let rule = match pre {
                                PreChoice::Lasso => PreRule::cv_lasso(cv),
                                PreChoice::Marginal => PreRule::Marginal,
                            };
                            cv_adaptive_lasso_with_stats(traj, dict, stats, &pf, &rule, cv, opts).map(|(_, f)| f)
                        }
                    })
                }
            };
            (m, fit)
        })
        .collect()
}

fn run_replication(cfg: &ExperimentConfig, a: usize, r: usize) -> Replication {
    let seed = replication_seed(cfg.base_seed, a, r);
    let axis_value = cfg.axis.value(a);
    let (horizon, p) = match &cfg.axis {
        Axis::Horizon(v) => (v[a], cfg.p),
        Axis::Params(v) => (cfg.horizon, v[a]),
    };
    let base_row = |method: String, metrics: Option<MetricRow>, error: Option<String>| ResultRow {
        kind: cfg.kind,
        axis_value,
        seed,
        method,
        horizon,
        p,
        d: cfg.d,
        metrics,
        error,
    };
    let failed = |e: DriftError| Replication {
        rows: vec![base_row(String::new(), None, Some(error_tag(&e)))],
        theta0: None,
        fits: Vec::new(),
    };

    let theta0 = match replication_theta(cfg, p, seed) {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let s = theta0.iter().filter(|v| **v != 0.0).count();
    let prepared = build_dictionary(cfg.dict, cfg.d, p, cfg.base_coeff.resolve(s)).and_then(|dict| {
        let sim = SimConfig::new(horizon, cfg.dt, seed).with_burn_in(cfg.burn_in);
        let traj = simulate_path(&dict, theta0.as_slice(), &sim)?;
        let stats = compute_stats(&traj, &dict)?;
        Ok((dict, traj, stats))
    });
    let (dict, traj, stats) = match prepared {
        Ok(v) => v,
        Err(e) => return failed(e),
    };

    let opts = SolveOptions::default();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (method, fit) in fit_methods(&traj, &dict, &stats, &cfg.methods, cfg.lambda, cfg.pre, &cfg.cv, &opts) {
        match fit.and_then(|f| score(cfg, &f, &theta0, &stats, seed, s).map(|row| (f, row))) {
            Ok((f, (row, err))) => {
                fits.push((method, f.theta));
                rows.push(base_row(method.to_string(), Some(row), err));
            }
            Err(e) => rows.push(base_row(method.to_string(), None, Some(error_tag(&e)))),
        }
    }
    Replication { rows, theta0: Some(theta0), fits }
}

fn score(
    cfg: &ExperimentConfig,
    fit: &Fit,
    theta0: &DVector<f64>,
    stats: &SuffStats,
    seed: u64,
    s: usize,
) -> Result<(MetricRow, Option<String>)> {
    let (l1, l2) = lp_errors(&fit.theta, theta0)?;
    let (an_stat, err) = if cfg.kind == ExperimentKind::Normality {
        match an_statistic(&fit.theta, theta0, stats, cfg.zero_tol) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(error_tag(&e))),
        }
    } else {
        (None, None)
    };
    let row = MetricRow {
        method: fit.method.to_string(),
        horizon: stats.horizon,
        p: theta0.len(),
        d: cfg.d,
        s,
        support_errors: support_errors(&fit.theta, theta0, cfg.zero_tol)?,
        sign_consistent: sign_consistent(&fit.theta, theta0, cfg.zero_tol)?,
        l1,
        l2,
        an_stat,
        seed,
    };
    Ok((row, err))
}

/// All result rows of a sweep, in axis-then-replication order.
pub fn run_rows(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(run_all(cfg)?.into_iter().flat_map(|r| r.rows).collect())
}

fn run_all(cfg: &ExperimentConfig) -> Result<Vec<Replication>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.axis.len()).flat_map(|a| (0..cfg.reps).map(move |r| (a, r))).collect();
    Ok(jobs.into_par_iter().map(|(a, r)| run_replication(cfg, a, r)).collect())
}

fn header_comment(cfg: &ExperimentConfig) -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# sparse-drift {} experiment, base_seed {}, generated at unix time {now}", cfg.kind, cfg.base_seed)
}

/// Runs the experiment and writes its CSV files into `out_dir`. Returns the
/// path of the main results file.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    if cfg.kind == ExperimentKind::Diagnostics {
        return run_diagnostics(cfg, out_dir);
    }
    let reps = run_all(cfg)?;

    let path = out_dir.join(RESULTS_FILE);
    let mut out = BufWriter::new(fs::File::create(&path)?);
    writeln!(out, "{}", header_comment(cfg))?;
    writeln!(out, "{}", results_header())?;
    for row in reps.iter().flat_map(|r| &r.rows) {
        writeln!(out, "{}", row.csv_line())?;
    }
    out.flush()?;

    if cfg.kind == ExperimentKind::Heatmap {
        let mut out = BufWriter::new(fs::File::create(out_dir.join(HEATMAP_FILE))?);
        writeln!(out, "coordinate,estimate,method")?;
        if let Some(first) = reps.first() {
            if let Some(theta0) = &first.theta0 {
                for (j, v) in theta0.iter().enumerate() {
                    writeln!(out, "{},{},truth", j + 1, v)?;
                }
            }
            for (method, theta) in &first.fits {
                for (j, v) in theta.iter().enumerate() {
                    writeln!(out, "{},{},{}", j + 1, v, method)?;
                }
            }
        }
        out.flush()?;
    }
    Ok(path)
}

/// Concentration report for the first horizon of a diagnostics config,
/// with `reps` replications.
pub fn diagnostics_report(cfg: &ExperimentConfig, reps: usize) -> Result<(DriftDictionary, DVector<f64>, ConcentrationReport)> {
    cfg.validate()?;
    let Axis::Horizon(ts) = &cfg.axis else {
        return arg_err("diagnostics sweep T values, not p values");
    };
    let seed = replication_seed(cfg.base_seed, 0, 0);
    let theta0 = replication_theta(cfg, cfg.p, seed)?;
    let s = theta0.iter().filter(|v| **v != 0.0).count();
    let dict = build_dictionary(cfg.dict, cfg.d, cfg.p, cfg.base_coeff.resolve(s))?;
    let sim = SimConfig::new(ts[0], cfg.dt, seed).with_burn_in(cfg.burn_in);
    let report = concentration_check(&dict, theta0.as_slice(), &sim, reps, &cfg.x_grid)?;
    Ok((dict, theta0, report))
}

fn run_diagnostics(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let Axis::Horizon(ts) = &cfg.axis else {
        return arg_err("diagnostics sweep T values, not p values");
    };
    let path = out_dir.join(CONCENTRATION_FILE);
    let mut conc = BufWriter::new(fs::File::create(&path)?);
    let mut assumptions = BufWriter::new(fs::File::create(out_dir.join(ASSUMPTIONS_FILE))?);
    writeln!(assumptions, "T,K,M_hat,min_eig_active,kappa_hat,flags")?;
    for (a, &t) in ts.iter().enumerate() {
        let seed = replication_seed(cfg.base_seed, a, 0);
        let theta0 = replication_theta(cfg, cfg.p, seed)?;
        let s = theta0.iter().filter(|v| **v != 0.0).count();
        let dict = build_dictionary(cfg.dict, cfg.d, cfg.p, cfg.base_coeff.resolve(s))?;
        let sim = SimConfig::new(t, cfg.dt, seed).with_burn_in(cfg.burn_in);
        let report = concentration_check(&dict, theta0.as_slice(), &sim, cfg.reps, &cfg.x_grid)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        // one header for the whole file when several horizons are swept
        let body = if a == 0 { text.as_str() } else { text.split_once('\n').map(|x| x.1).unwrap_or("") };
        conc.write_all(body.as_bytes())?;

        let support: Vec<usize> = (0..theta0.len()).filter(|&j| theta0[j] != 0.0).collect();
        let eta0 = &report.c_inf * &theta0;
        let tau = min_eig_active(&report.c_inf, &support)?;
        let kappa = irrepresentable_check(&report.c_inf, &support, &eta0)
            .map(|k| k.to_string())
            .unwrap_or_else(|e| error_tag(&e).replace(',', ";"));
        writeln!(assumptions, "{t},{},{},{tau},{kappa},{}", report.k, report.m_hat, report.n_flags())?;
    }
    conc.flush()?;
    assumptions.flush()?;
    Ok(path)
}
