//! Drift dictionaries.
//!
//! A dictionary is a finite family of vector fields `φ_0, φ_1, …, φ_p` on
//! `R^d`. The drift of the diffusion is linear in the parameter:
//!
//! ```text
//! b_θ(x) = φ_0(x) + Σ_j θ_j φ_j(x) = φ_0(x) + Φ(x) θ
//! ```
//!
//! where `Φ(x)` is the `d × p` matrix whose `j`-th column is `φ_j(x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, DriftError, Result};

/// A user-supplied vector field `x ↦ f(x)`, written into the output slice.
pub type BasisFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DictionaryKind {
    /// `φ_j(x)_m = cos((j+1) x_m)` for `j = 1..p`, and `φ_0(x) = c·x`.
    Cosine,
    /// Linear maps `φ_j(x) = A_j x` with `φ_0 ≡ 0`.
    LinearOu,
    /// Arbitrary callables with caller-declared Lipschitz bounds.
    Custom,
}

impl fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DictionaryKind::Cosine => "cosine",
            DictionaryKind::LinearOu => "linear-ou",
            DictionaryKind::Custom => "custom",
        })
    }
}

impl std::str::FromStr for DictionaryKind {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(DictionaryKind::Cosine),
            "linear-ou" | "linearou" | "linear_ou" | "ou" => Ok(DictionaryKind::LinearOu),
            "custom" => arg_err("custom dictionaries can only be built through the library API"),
            other => arg_err(format!("unknown dictionary kind `{other}`")),
        }
    }
}

#[derive(Clone)]
enum Basis {
    Cosine,
    Linear(Vec<DMatrix<f64>>),
    Custom {
        phis: Vec<BasisFn>,
        base: Option<BasisFn>,
        lipschitz: Option<DMatrix<f64>>,
    },
}

/// The basis defining the drift. Immutable once built.
#[derive(Clone)]
pub struct DriftDictionary {
    d: usize,
    p: usize,
    base_coeff: f64,
    basis: Basis,
}

impl fmt::Debug for DriftDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftDictionary")
            .field("kind", &self.kind())
            .field("d", &self.d)
            .field("p", &self.p)
            .field("base_coeff", &self.base_coeff)
            .finish()
    }
}

/// Upper bounds `Q_ij` on the Lipschitz norm of `x ↦ ⟨φ_i(x), φ_j(x)⟩`, and
/// the operator norm `K = ‖Q‖` that serves as the concentration constant.
#[derive(Clone, Debug)]
pub struct LipschitzMatrix {
    pub q: DMatrix<f64>,
    pub k: f64,
}

fn check_dims(d: usize, p: usize) -> Result<()> {
    if d == 0 || p == 0 {
        return arg_err(format!("dictionary needs d ≥ 1 and p ≥ 1 (got d={d}, p={p})"));
    }
    Ok(())
}

impl DriftDictionary {
    /// Cosine dictionary with linear confinement `φ_0(x) = base_coeff · x`.
    pub fn cosine(d: usize, p: usize, base_coeff: f64) -> Result<Self> {
        check_dims(d, p)?;
        if !base_coeff.is_finite() {
            return Err(DriftError::NumericInput("base_coeff".into()));
        }
        Ok(Self { d, p, base_coeff, basis: Basis::Cosine })
    }

    /// Linear (Ornstein–Uhlenbeck) dictionary built from coordinate projections.
    ///
    /// With `p == d` the maps are the diagonal projections `x ↦ x_j e_j`;
    /// with `p == d²` they are all matrix units `x ↦ x_b e_a` in row-major
    /// order `j = a·d + b`. Any other shape needs [`Self::linear_ou_with_maps`].
    pub fn linear_ou(d: usize, p: usize) -> Result<Self> {
        check_dims(d, p)?;
        let maps = if p == d {
            (0..d)
                .map(|j| {
                    let mut a = DMatrix::zeros(d, d);
                    a[(j, j)] = 1.0;
                    a
                })
                .collect()
        } else if p == d * d {
            (0..p)
                .map(|j| {
                    let mut a = DMatrix::zeros(d, d);
                    a[(j / d, j % d)] = 1.0;
                    a
                })
                .collect()
        } else {
            return arg_err(format!(
                "linear-ou with d={d} needs p=d or p=d² for default projections (got p={p})"
            ));
        };
        Ok(Self { d, p, base_coeff: 0.0, basis: Basis::Linear(maps) })
    }

    /// Linear dictionary `φ_j(x) = A_j x` from explicit `d × d` matrices.
    pub fn linear_ou_with_maps(d: usize, maps: Vec<DMatrix<f64>>) -> Result<Self> {
        check_dims(d, maps.len())?;
        for (j, a) in maps.iter().enumerate() {
            if a.nrows() != d || a.ncols() != d {
                return arg_err(format!("linear map {j} is {}×{}, expected {d}×{d}", a.nrows(), a.ncols()));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(DriftError::NumericInput(format!("linear map {j}")));
            }
        }
        Ok(Self { d, p: maps.len(), base_coeff: 0.0, basis: Basis::Linear(maps) })
    }

    /// Custom dictionary. `lipschitz`, when given, must be a symmetric
    /// nonnegative `p × p` matrix of declared bounds; it is never inferred.
    pub fn custom(
        d: usize,
        phis: Vec<BasisFn>,
        base: Option<BasisFn>,
        lipschitz: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let p = phis.len();
        check_dims(d, p)?;
        if let Some(q) = &lipschitz {
            validate_q(q, p)?;
        }
        Ok(Self { d, p, base_coeff: 0.0, basis: Basis::Custom { phis, base, lipschitz } })
    }

    pub fn kind(&self) -> DictionaryKind {
        match self.basis {
            Basis::Cosine => DictionaryKind::Cosine,
            Basis::Linear(_) => DictionaryKind::LinearOu,
            Basis::Custom { .. } => DictionaryKind::Custom,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_params(&self) -> usize {
        self.p
    }

    pub fn base_coeff(&self) -> f64 {
        self.base_coeff
    }

    /// Same dictionary with a different `φ_0` coefficient (cosine kind only).
    pub fn with_base_coeff(&self, base_coeff: f64) -> Result<Self> {
        match self.basis {
            Basis::Cosine => Self::cosine(self.d, self.p, base_coeff),
            _ => arg_err(format!("base_coeff only applies to cosine dictionaries, not {}", self.kind())),
        }
    }

    /// True when `φ_0` vanishes identically.
    pub fn base_is_zero(&self) -> bool {
        match &self.basis {
            Basis::Cosine => self.base_coeff == 0.0,
            Basis::Linear(_) => true,
            Basis::Custom { base, .. } => base.is_none(),
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return arg_err(format!("state has length {}, dictionary dimension is {}", x.len(), self.d));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DriftError::NumericInput("state vector contains non-finite entries".into()));
        }
        Ok(())
    }

    /// `Φ(x)` as a `d × p` matrix.
    pub fn eval_phi(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let mut out = DMatrix::zeros(self.d, self.p);
        self.phi_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Writes `Φ(x)` column-major into `out` (length `d·p`). No checks.
    pub(crate) fn phi_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        match &self.basis {
            Basis::Cosine => {
                for (j, col) in out.chunks_exact_mut(d).enumerate() {
                    let freq = (j + 2) as f64;
                    for (o, &xm) in col.iter_mut().zip(x) {
                        *o = (freq * xm).cos();
                    }
                }
            }
            Basis::Linear(maps) => {
                for (a, col) in maps.iter().zip(out.chunks_exact_mut(d)) {
                    for (r, o) in col.iter_mut().enumerate() {
                        *o = (0..d).map(|c| a[(r, c)] * x[c]).sum();
                    }
                }
            }
            Basis::Custom { phis, .. } => {
                for (f, col) in phis.iter().zip(out.chunks_exact_mut(d)) {
                    f(x, col);
                }
            }
        }
    }

    /// Writes `φ_0(x)` into `out` (length `d`). No checks.
    pub(crate) fn base_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.basis {
            Basis::Cosine => {
                for (o, &xm) in out.iter_mut().zip(x) {
                    *o = self.base_coeff * xm;
                }
            }
            Basis::Linear(_) => out.fill(0.0),
            Basis::Custom { base, .. } => match base {
                Some(f) => f(x, out),
                None => out.fill(0.0),
            },
        }
    }

    /// `φ_0(x)`.
    pub fn eval_base(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut out = DVector::zeros(self.d);
        self.base_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// `b_θ(x) = φ_0(x) + Φ(x) θ`.
    pub fn eval_drift(&self, theta: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        if theta.len() != self.p {
            return arg_err(format!("theta has length {}, dictionary has p={}", theta.len(), self.p));
        }
        self.check_x(x)?;
        let mut phi = vec![0.0; self.d * self.p];
        let mut out = DVector::zeros(self.d);
        self.phi_into(x, &mut phi);
        self.base_into(x, out.as_mut_slice());
        for (col, &t) in phi.chunks_exact(self.d).zip(theta) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += t * v;
            }
        }
        Ok(out)
    }

    /// Lipschitz-constant matrix `Q` and its operator norm `K`.
    ///
    /// For the cosine basis, `∂/∂x_m [cos(a x_m) cos(b x_m)]` is bounded by
    /// `a + b`, so `Q_ij = √d · ((i+1) + (j+1))` bounds the gradient norm.
    pub fn lipschitz_matrix(&self) -> Result<LipschitzMatrix> {
        let q = match &self.basis {
            Basis::Cosine => {
                let scale = (self.d as f64).sqrt();
                DMatrix::from_fn(self.p, self.p, |i, j| scale * ((i + 2) + (j + 2)) as f64)
            }
            Basis::Linear(_) => {
                return Err(DriftError::UnsupportedBasis(
                    "linear maps have unbounded pairwise products; no Lipschitz constant exists".into(),
                ))
            }
            Basis::Custom { lipschitz, .. } => match lipschitz {
                Some(q) => q.clone(),
                None => {
                    return Err(DriftError::UnsupportedBasis(
                        "custom dictionary declares no Lipschitz bounds".into(),
                    ))
                }
            },
        };
        let k = operator_norm_sym(&q);
        Ok(LipschitzMatrix { q, k })
    }
}

fn validate_q(q: &DMatrix<f64>, p: usize) -> Result<()> {
    if q.nrows() != p || q.ncols() != p {
        return arg_err(format!("Lipschitz matrix must be {p}×{p}"));
    }
    for i in 0..p {
        for j in 0..p {
            let v = q[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return arg_err(format!("Lipschitz bound Q[{i},{j}] = {v} must be finite and ≥ 0"));
            }
            if (v - q[(j, i)]).abs() > 1e-12 * (1.0 + v.abs()) {
                return arg_err("Lipschitz matrix must be symmetric");
            }
        }
    }
    Ok(())
}

/// Spectral norm of a symmetric matrix.
fn operator_norm_sym(q: &DMatrix<f64>) -> f64 {
    q.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
