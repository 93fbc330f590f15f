use thiserror::Error;

/// Errors raised by the geometry, calibration, sampling and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is below the minimum of 3")]
    Dimension(usize),

    #[error("{what} = {value} is outside {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("invalid cone parameters (a = {a}, b = {b}): {reason}")]
    InvalidCone { a: f64, b: f64, reason: String },

    #[error("cone index set: {0}")]
    IndexSet(String),

    #[error("target (value {value:e}, slope {slope:e}) at u = {u} is outside the solvable window")]
    OutsideWindow { u: f64, value: f64, slope: f64 },

    #[error("Newton iteration stalled after {iterations} steps at u = {u} (scaled residual {residual:e})")]
    NonConvergence { u: f64, iterations: usize, residual: f64 },

    #[error("solution a = {a}, b = {b} at u = {u} lies outside the configured box: {reason}")]
    OutsideBox { u: f64, a: f64, b: f64, reason: String },

    #[error("target is not convex at grid node {index} (second difference {second_difference:e})")]
    Convexity { index: usize, second_difference: f64 },

    #[error("envelope misses the target by {error:e} at u = {u} (tolerance {tol:e})")]
    Fit { u: f64, error: f64, tol: f64 },

    #[error("pairing residual {residual:e} at r = {r} exceeds {tol:e}")]
    Pairing { r: f64, residual: f64, tol: f64 },

    #[error("rejection sampler gave up after {attempts} attempts")]
    RejectionBudget { attempts: u64 },

    #[error("empty sample")]
    EmptySample,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, range: &'static str) -> Self {
        Error::Domain { what, value, range }
    }

    /// True for failures of a numerical procedure rather than of its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::OutsideBox { .. }
                | Error::OutsideWindow { .. }
                | Error::Convexity { .. }
                | Error::Fit { .. }
                | Error::Pairing { .. }
                | Error::RejectionBudget { .. }
                | Error::InvalidCone { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
