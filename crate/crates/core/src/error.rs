use thiserror::Error;

/// Errors produced by model construction, solvers, and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error(
        "policy is not mean-square stabilizing: moment-map spectral radius {rho:.6} >= 1/gamma = {bound:.6}"
    )]
    NotStabilizing { rho: f64, bound: f64 },
    #[error(
        "fixed-point iteration did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("persistent excitation violated: instrument/regressor cross matrix has rank {rank}, need {need}")]
    PersistentExcitation { rank: usize, need: usize },
    #[error("recursive update rejected: gain denominator {denominator:.3e} is within 1e-14 of zero")]
    DegenerateUpdate { denominator: f64 },
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
