//! Euler–Maruyama simulation of `dX_t = -b_θ(X_t) dt + dW_t`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dictionary::DriftDictionary;
use crate::error::{arg_err, DriftError, Result};

/// States whose Euclidean norm exceeds this are treated as an explosion.
pub const EXPLOSION_NORM: f64 = 1e8;

/// Default burn-in, in time units, used to approach the invariant law.
pub const DEFAULT_BURN_IN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Observation horizon `T`.
    pub horizon: f64,
    pub dt: f64,
    /// Simulated and discarded prefix, in time units.
    pub burn_in: f64,
    pub seed: u64,
    pub record_noise: bool,
    /// Starting state before burn-in; `None` means the origin.
    pub initial: Option<Vec<f64>>,
    /// Replaces every Gaussian draw by zero. Test hook for deterministic paths.
    pub zero_noise: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            burn_in: DEFAULT_BURN_IN,
            seed,
            record_noise: false,
            initial: None,
            zero_noise: false,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_noise_recorded(mut self) -> Self {
        self.record_noise = true;
        self
    }

    /// Number of post-burn-in steps `n = T / dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return arg_err(format!("dt must be positive and finite (got {})", self.dt));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return arg_err(format!("horizon T must be positive and finite (got {})", self.horizon));
        }
        if self.dt > self.horizon {
            return arg_err(format!("dt = {} exceeds T = {}", self.dt, self.horizon));
        }
        whole_steps(self.horizon, self.dt, "T")
    }

    pub fn burn_in_steps(&self) -> Result<usize> {
        if !(self.burn_in >= 0.0) || !self.burn_in.is_finite() {
            return arg_err(format!("burn_in must be nonnegative (got {})", self.burn_in));
        }
        if self.burn_in == 0.0 {
            return Ok(0);
        }
        whole_steps(self.burn_in, self.dt, "burn_in")
    }
}

fn whole_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
        return arg_err(format!("{what} = {span} is not a whole number of steps dt = {dt}"));
    }
    Ok(n as usize)
}

/// A discretely observed path on an equidistant grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dt: f64,
    d: usize,
    /// Row-major `(n+1) × d`.
    states: Vec<f64>,
    /// Row-major `n × d`; row `k` is `W_{t_{k+1}} - W_{t_k}`.
    noise: Option<Vec<f64>>,
}

impl Trajectory {
    /// Builds a trajectory from row-major state data, validating shape and finiteness.
    pub fn new(dt: f64, d: usize, states: Vec<f64>, noise: Option<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return arg_err(format!("dt must be positive (got {dt})"));
        }
        if d == 0 || states.is_empty() || !states.len().is_multiple_of(d) {
            return arg_err("state data is not a whole number of rows of width d");
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(DriftError::NumericInput("trajectory states".into()));
        }
        let n = states.len() / d - 1;
        if let Some(w) = &noise {
            if w.len() != n * d {
                return arg_err(format!("noise has {} rows, expected {n}", w.len() / d));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(DriftError::NumericInput("noise increments".into()));
            }
        }
        Ok(Self { dt, d, states, noise })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of grid points, `n + 1`.
    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of increments `n`.
    pub fn n_steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.d..(k + 1) * self.d]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn noise(&self) -> Option<&[f64]> {
        self.noise.as_deref()
    }

    pub fn noise_increment(&self, k: usize) -> Option<&[f64]> {
        self.noise.as_ref().map(|w| &w[k * self.d..(k + 1) * self.d])
    }

    /// Sub-path over grid points `start..=end` (shares the endpoints with
    /// neighbouring segments, so increments partition exactly).
    pub fn segment(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end >= self.len() {
            return arg_err(format!("invalid segment {start}..={end} of a {}-point path", self.len()));
        }
        let d = self.d;
        Ok(Trajectory {
            dt: self.dt,
            d,
            states: self.states[start * d..(end + 1) * d].to_vec(),
            noise: self.noise.as_ref().map(|w| w[start * d..end * d].to_vec()),
        })
    }

    /// Writes `t,x1..xd[,w1..wd]`. The noise columns of row `k` hold the
    /// increment that follows `t_k`; they are empty on the last row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.d;
        let mut header = String::from("t");
        for m in 1..=d {
            header.push_str(&format!(",x{m}"));
        }
        if self.noise.is_some() {
            for m in 1..=d {
                header.push_str(&format!(",w{m}"));
            }
        }
        writeln!(out, "{header}")?;
        let n = self.n_steps();
        for k in 0..self.len() {
            let mut line = format!("{}", k as f64 * self.dt);
            for v in self.state(k) {
                line.push_str(&format!(",{v}"));
            }
            if let Some(w) = &self.noise {
                for m in 0..d {
                    if k < n {
                        line.push_str(&format!(",{}", w[k * d + m]));
                    } else {
                        line.push(',');
                    }
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf)?;
        buf.flush()?;
        Ok(())
    }

    /// Parses the CSV layout produced by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(DriftError::Parse("empty trajectory file".into())),
        };
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(DriftError::Parse("trajectory header must start with `t`".into()));
        }
        let d = cols.iter().filter(|c| c.starts_with('x')).count();
        let nw = cols.iter().filter(|c| c.starts_with('w')).count();
        if d == 0 || cols.len() != 1 + d + nw || (nw != 0 && nw != d) {
            return Err(DriftError::Parse(format!("unrecognised trajectory header `{header}`")));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut noise = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(DriftError::Parse(format!("row {}: expected {} fields", idx + 2, cols.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| DriftError::Parse(format!("row {}: bad number `{s}`", idx + 2)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..=d] {
                states.push(parse(f)?);
            }
            if nw > 0 {
                let w = &fields[1 + d..];
                if w.iter().all(|s| s.is_empty()) {
                    continue;
                }
                for f in w {
                    noise.push(parse(f)?);
                }
            }
        }
        if times.len() < 2 {
            return Err(DriftError::Parse("trajectory needs at least two grid points".into()));
        }
        let dt = times[1] - times[0];
        let noise = if nw > 0 { Some(noise) } else { None };
        Trajectory::new(dt, d, states, noise)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Simulates `X_{k+1} = X_k - b_θ(X_k) dt + √dt ξ_k` from the origin (or
/// `cfg.initial`), discards the burn-in prefix and returns the remaining
/// `n + 1` states. Bit-reproducible for a given configuration.
pub fn simulate_path(dict: &DriftDictionary, theta0: &[f64], cfg: &SimConfig) -> Result<Trajectory> {
    let d = dict.dim();
    let p = dict.n_params();
    if theta0.len() != p {
        return arg_err(format!("theta0 has length {}, dictionary has p={p}", theta0.len()));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(DriftError::NumericInput("theta0".into()));
    }
    let n = cfg.n_steps()?;
    let burn = cfg.burn_in_steps()?;
    let mut x = match &cfg.initial {
        Some(x0) if x0.len() != d => return arg_err(format!("initial state has length {}, expected {d}", x0.len())),
        Some(x0) => x0.clone(),
        None => vec![0.0; d],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sqrt_dt = cfg.dt.sqrt();
    let mut phi = vec![0.0; d * p];
    let mut drift = vec![0.0; d];
    let mut dw = vec![0.0; d];

    let mut states = Vec::with_capacity((n + 1) * d);
    let mut noise = if cfg.record_noise { Some(Vec::with_capacity(n * d)) } else { None };

    for step in 0..burn + n {
        if step == burn {
            states.extend_from_slice(&x);
        }
        dict.base_into(&x, &mut drift);
        dict.phi_into(&x, &mut phi);
        for (col, &t) in phi.chunks_exact(d).zip(theta0) {
            if t != 0.0 {
                for (b, v) in drift.iter_mut().zip(col) {
                    *b += t * v;
                }
            }
        }
        for w in dw.iter_mut() {
            *w = if cfg.zero_noise {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                sqrt_dt * z
            };
        }
        let mut norm2 = 0.0;
        for ((xm, b), w) in x.iter_mut().zip(&drift).zip(&dw) {
            *xm += -b * cfg.dt + w;
            norm2 += *xm * *xm;
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() || norm > EXPLOSION_NORM {
            return Err(DriftError::SimulationDiverged { step, norm });
        }
        if step >= burn {
            states.extend_from_slice(&x);
            if let Some(w) = noise.as_mut() {
                w.extend_from_slice(&dw);
            }
        }
    }
    Trajectory::new(cfg.dt, d, states, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou1() -> DriftDictionary {
        DriftDictionary::linear_ou(1, 1).unwrap()
    }

    #[test]
    fn zero_noise_euler_recursion() {
        let cfg = SimConfig {
            initial: Some(vec![1.0]),
            zero_noise: true,
            burn_in: 0.0,
            ..SimConfig::new(0.2, 0.1, 0)
        };
        let path = simulate_path(&ou1(), &[1.0], &cfg).unwrap();
        assert_eq!(path.len(), 3);
        assert_eq!(path.state(0), &[1.0]);
        assert!((path.state(1)[0] - 0.9).abs() < 1e-15);
        assert!((path.state(2)[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn drift_free_increments_equal_noise() {
        let cfg = SimConfig::new(1.0, 0.01, 7).with_noise_recorded();
        let path = simulate_path(&ou1(), &[0.0], &cfg).unwrap();
        for k in 0..path.n_steps() {
            let inc = path.state(k + 1)[0] - path.state(k)[0];
            let w = path.noise_increment(k).unwrap()[0];
            // x + w rounds once, so the increment matches up to one ulp of x.
            assert!((inc - w).abs() <= 4.0 * f64::EPSILON * path.state(k + 1)[0].abs().max(1.0));
        }
    }

    #[test]
    fn desk_scale_path_has_expected_length() {
        let dict = DriftDictionary::cosine(5, 30, 18.0).unwrap();
        let mut theta = vec![0.0; 30];
        theta[..6].copy_from_slice(&[2.0, 2.5, 3.0, 2.2, 2.8, 2.4]);
        let path = simulate_path(&dict, &theta, &SimConfig::new(10.0, 0.05, 1)).unwrap();
        assert_eq!(path.n_steps(), 200);
        assert!(path.states().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_bytes() {
        let dict = DriftDictionary::cosine(2, 3, 2.0).unwrap();
        let cfg = SimConfig::new(5.0, 0.05, 99).with_noise_recorded();
        let a = simulate_path(&dict, &[1.0, 0.0, -0.5], &cfg).unwrap();
        let b = simulate_path(&dict, &[1.0, 0.0, -0.5], &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&dict, &[1.0, 0.0, -0.5], &SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn explosion_is_reported() {
        // dX = +10 X dt is unstable.
        let cfg = SimConfig { initial: Some(vec![1.0]), ..SimConfig::new(100.0, 0.1, 3) };
        match simulate_path(&ou1(), &[-10.0], &cfg) {
            Err(DriftError::SimulationDiverged { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(simulate_path(&ou1(), &[1.0], &SimConfig::new(1.0, 0.0, 0)).is_err());
        assert!(simulate_path(&ou1(), &[1.0], &SimConfig::new(0.05, 0.1, 0)).is_err());
        assert!(simulate_path(&ou1(), &[1.0], &SimConfig::new(1.0, 0.3, 0)).is_err());
        assert!(simulate_path(&ou1(), &[1.0, 2.0], &SimConfig::new(1.0, 0.1, 0)).is_err());
        let cfg = SimConfig::new(1.0, 0.1, 0).with_burn_in(0.25);
        assert!(simulate_path(&ou1(), &[1.0], &cfg).is_err());
    }

    #[test]
    fn brownian_variance_at_unit_time() {
        let reps = 1000;
        let finals: Vec<f64> = (0..reps)
            .map(|r| {
                let cfg = SimConfig::new(1.0, 0.01, r).with_burn_in(0.0);
                let path = simulate_path(&ou1(), &[0.0], &cfg).unwrap();
                path.state(path.n_steps())[0]
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / reps as f64;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((0.85..=1.15).contains(&var), "variance {var}");
    }

    #[test]
    fn ou_stationary_variance() {
        let cfg = SimConfig::new(200.0, 0.01, 11);
        let path = simulate_path(&ou1(), &[1.0], &cfg).unwrap();
        let xs: Vec<f64> = path.states().to_vec();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((0.4..=0.6).contains(&var), "variance {var}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dict = DriftDictionary::cosine(2, 2, 1.0).unwrap();
        let cfg = SimConfig::new(1.0, 0.05, 5).with_noise_recorded();
        let path = simulate_path(&dict, &[0.5, -0.5], &cfg).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,w1,w2\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states(), path.states());
        assert_eq!(back.noise(), path.noise());
        assert!((back.dt() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn segments_share_endpoints() {
        let cfg = SimConfig::new(1.0, 0.1, 5).with_noise_recorded();
        let path = simulate_path(&ou1(), &[1.0], &cfg).unwrap();
        let a = path.segment(0, 4).unwrap();
        let b = path.segment(4, 10).unwrap();
        assert_eq!(a.n_steps() + b.n_steps(), path.n_steps());
        assert_eq!(a.state(4), b.state(0));
        assert_eq!(b.noise().unwrap().len(), 6);
        assert!(path.segment(3, 3).is_err());
    }
}
