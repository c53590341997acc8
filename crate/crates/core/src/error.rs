use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum DriftError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),

    #[error("simulation diverged at step {step} (|x| = {norm:e})")]
    SimulationDiverged { step: usize, norm: f64 },

    #[error("trajectory has no recorded noise increments")]
    MissingNoise,

    #[error("coordinate {0} has zero curvature and cannot be determined")]
    DegenerateCoordinate(usize),

    #[error("every pre-estimator coordinate is negligible; adaptive weights are all infinite")]
    DegeneratePreEstimator,

    #[error("estimated support is empty")]
    EmptySupport,

    #[error("information matrix restricted to the support is singular")]
    SingularInformation,

    #[error("cross-validation failed: {0}")]
    CvFailed(String),

    #[error("parameter has no nonzero coordinates: {0}")]
    DegenerateParameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DriftError {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            DriftError::Argument(_) | DriftError::Config { .. } | DriftError::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, DriftError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DriftError::Argument(msg.into()))
}
