use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multi-index: {0}")]
    MultiIndex(String),

    #[error("operator is not elliptic: minimum eigenvalue {lambda_min:.3e} below threshold {threshold:.3e}")]
    NotElliptic { lambda_min: f64, threshold: f64 },

    #[error("coefficient matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("invalid operator: {0}")]
    Operator(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no boundary nodes inside ball of radius {radius} around {center:?}")]
    EmptyBall { center: [f64; 3], radius: f64 },

    #[error("system matrix is not positive definite (<p, Mp> = {0:.3e} at iteration {1})")]
    Indefinite(f64, usize),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
