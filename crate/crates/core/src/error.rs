use thiserror::Error;

/// Errors raised by the numerical kernels and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("functionals are linearly dependent (singular value ratio below {threshold:e}); offending rows {rows:?}")]
    RankDeficient { threshold: f64, rows: Vec<usize> },

    #[error("h_k undefined: nu^3 lambda1 (kappa+1) - 16 tr Q = {denominator:e} <= 0 (admissibility condition 22a violated)")]
    HkDomain { denominator: f64 },

    #[error("numerical failure at t = {time}: {reason} (last valid time {last_valid_time})")]
    NumericalFailure {
        time: f64,
        last_valid_time: f64,
        reason: String,
    },

    #[error("ensemble too small: {what} needs at least {required}, got {got}")]
    EnsembleTooSmall {
        what: &'static str,
        required: usize,
        got: usize,
    },

    #[error("parameters outside the admissible region: {0}")]
    Inadmissible(String),

    #[error("misaligned time grids: {0}")]
    Misaligned(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
