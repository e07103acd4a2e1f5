//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:.3e} exceeds tolerance {tol:.3e}")]
    NotHermitian { max_asymmetry: f64, tol: f64 },

    #[error("trace has residual imaginary part {imag:.3e} (tolerance {tol:.3e})")]
    NonRealTrace { imag: f64, tol: f64 },

    #[error("singular or ill-conditioned matrix (smallest pivot {pivot:.3e})")]
    Singular { pivot: f64 },

    #[error("invalid state: Bloch vector norm {norm} exceeds 1")]
    InvalidState { norm: f64 },

    #[error("invalid measurement axis: norm {norm} is not 1")]
    InvalidAxis { norm: f64 },

    #[error("gate error strength {0} outside [0, 1)")]
    GateErrorRange(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parameters not estimable: {0}")]
    NotEstimable(String),

    #[error("numerical integrity violation: {0}")]
    NumericalIntegrity(String),

    #[error("cannot refine from a start point with non-finite log-likelihood")]
    RefineFromInvalidStart,

    #[error("dataset references unknown experiment id {0}")]
    UnknownExperiment(usize),

    #[error("landscape has no usable cells")]
    EmptyLandscape,

    #[error("unsupported menu file: {0}")]
    MenuFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
