use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step size underflow at t = {t:.9e} s (h = {h:.3e} s, state = {state:?})")]
    StepSizeUnderflow { t: f64, h: f64, state: [f64; 6] },

    #[error("non-finite state at t = {t:.9e} s")]
    NonFinite { t: f64 },

    #[error("steady state not reached: consecutive-cycle discrepancy {discrepancy:.3e} exceeds {threshold:.1e} after {elapsed:.3} s")]
    NotConverged {
        discrepancy: f64,
        threshold: f64,
        elapsed: f64,
    },

    #[error("linearity violated: {what} changed by {relative:.3e} (limit {limit:.1e}) when the drive was halved")]
    Linearity {
        what: String,
        relative: f64,
        limit: f64,
    },

    #[error(
        "degenerate signatures: Gram condition number {condition:.3e} exceeds {threshold:.1e}"
    )]
    Degenerate { condition: f64, threshold: f64 },

    #[error("sample grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in run reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::NonFinite { .. } => "non_finite",
            Error::NotConverged { .. } => "not_converged",
            Error::Linearity { .. } => "linearity",
            Error::Degenerate { .. } => "degenerate",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Parse { .. } => "parse",
            Error::Usage(_) => "usage",
            Error::UnknownKey(_) => "unknown_key",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
