use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OseenError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("R_max = {0} is too small to hold the Gaussian weight tail (need at least 15)")]
    DomainTooSmall(f64),
    #[error("operation undefined for mode {0}")]
    InvalidMode(i32),
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("contour invariant violated: eigenvalue with real part {re} lies left of x0 = {x0}")]
    ContourInvariant { x0: f64, re: f64 },
    #[error("resolution alarm: {0}")]
    Resolution(String),
    #[error("blow-up guard tripped at tau = {tau}: norm {norm} exceeds {limit}")]
    BlowUp { tau: f64, norm: f64, limit: f64 },
    #[error("fit rejected: {0}")]
    FitRejected(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, OseenError>;
