use thiserror::Error;

/// Errors produced by the numerical pipelines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} exceeds the limit {max}")]
    SizeLimit {
        what: &'static str,
        value: usize,
        max: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("quadrature missed tolerance {tol:e} (residual estimate {residual:e})")]
    Tolerance { tol: f64, residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("majorant is not positive definite (smallest eigenvalue {0:e})")]
    InvalidMajorant(f64),
    #[error("hermiticity violated: asymmetry {0:e}")]
    Hermiticity(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
