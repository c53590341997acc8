//! Sparse drift estimation for ergodic diffusions `dX = -b_θ(X) dt + dW`
//! with a linear-in-parameter drift `b_θ = φ0 + Σ θ_j φ_j`.
//!
//! The pipeline is: [`simulate`] a path, reduce it to sufficient
//! statistics with [`stats`], fit with one of the [`estimate`] routines
//! (tuning λ through [`tune`]), and score with [`evaluate`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod dictionary;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod experiments;
pub mod simulate;
pub mod solvers;
pub mod stats;
pub mod tune;

pub use dictionary::{DictionaryKind, DriftDictionary};
pub use error::{DriftError, Result};
pub use simulate::{simulate_path, SimConfig, Trajectory};
pub use solvers::{Fit, Method, SolveOptions};
pub use stats::{compute_stats, SuffStats};
