use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("exponent overflow guard: Re exponent {exponent:.3e} exceeds {limit}; use the fused integrand")]
    Overflow { exponent: f64, limit: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("order mismatch: field has order {field}, expected {expected}")]
    OrderMismatch { field: u8, expected: u8 },
    #[error("reality check failed: imaginary residue {residue:.3e} above {limit:.1e}")]
    Symmetry { residue: f64, limit: f64 },
    #[error("force too large / contraction lost after {iterations} iterations (residuals {residuals:?})")]
    ContractionLost { iterations: usize, residuals: Vec<f64> },
    #[error("derivative fixed point lost contraction (iterate norms {norms:?})")]
    DerivativeContractionLost { norms: Vec<f64> },
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid force specification: {0}")]
    Force(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

pub type Result<T> = std::result::Result<T, Error>;
