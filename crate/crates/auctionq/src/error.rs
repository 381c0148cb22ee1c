use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Bad caller input: dimensions, ranges, malformed configs.
    Validation(String),
    /// A cell pair with no connecting path (corrupted maze input).
    Unreachable { from: (usize, usize), to: (usize, usize) },
    /// Value iteration failed to reach the residual tolerance.
    NoConvergence { residual: f64, sweeps: usize },
    /// Weight/feature shapes disagree.
    DimensionMismatch(String),
    /// An action that violates matching feasibility for the given state.
    InfeasibleMatching(String),
    /// A size guard on an exhaustive operation was exceeded.
    GuardExceeded(String),
    /// A non-finite number surfaced mid-computation.
    NonFinite(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Unreachable { from, to } => {
                write!(f, "no path from {from:?} to {to:?}")
            }
            Error::NoConvergence { residual, sweeps } => write!(
                f,
                "value iteration did not converge after {sweeps} sweeps (residual {residual:.3e})"
            ),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InfeasibleMatching(msg) => write!(f, "infeasible matching: {msg}"),
            Error::GuardExceeded(msg) => write!(f, "size guard exceeded: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    /// Process exit code: 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::DimensionMismatch(_) | Error::GuardExceeded(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
