use thiserror::Error;

/// Errors produced by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("block index ({a}, {b}) out of range for {s} blocks")]
    BlockIndex { a: usize, b: usize, s: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("eigenvalues {a} and {b} of Lambda are closer than {tol:e} (stratum violation)")]
    Stratum { a: usize, b: usize, tol: f64 },

    #[error("eigen-solver failed to converge")]
    EigenSolver,

    #[error("matrix is singular to working precision: {0}")]
    Singular(String),

    #[error("pole: {0}")]
    Pole(String),

    #[error("unsupported resonance: {0}")]
    UnsupportedResonance(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("no admissible direction: best margin {margin:e} below {min:e}")]
    NoAdmissibleDirection { margin: f64, min: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
