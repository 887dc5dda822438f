use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gauge is not symmetric at ({i},{j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("marginal mismatch: {0}")]
    Marginal(String),
    #[error("problem size {size} exceeds bound {bound}")]
    SizeBound { size: usize, bound: usize },
    #[error("weights are not representable over denominator {0}")]
    NotRepresentable(u64),
    #[error("solver precondition failed: {0}")]
    Precondition(String),
    #[error("missing derivative: {0}")]
    MissingDerivative(&'static str),
    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
