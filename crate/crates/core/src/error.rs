use alloc::string::String;

/// Errors raised by the numerical routines and model samplers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("transition is not stable: spectral radius {spectral_radius} >= 1")]
    Unstable { spectral_radius: f64 },
    #[error("{what} is not row-stochastic (row {row})")]
    NotStochastic { what: &'static str, row: usize },
    #[error("stationary distribution is not unique ({closed_classes} closed classes)")]
    NonUnique { closed_classes: usize },
    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergent { iterations: usize, residual: f64 },
    #[error("kernel of the likelihood matrix is trivial")]
    TrivialKernel,
    #[error("observation {index} has zero marginal mass")]
    ZeroMarginal { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("need at least {needed} samples, found {found}")]
    NotEnoughSamples { needed: usize, found: usize },
    #[error("sequence has zero variance")]
    ZeroVariance,
    #[error("Newton iteration failed from all {starts} starting points")]
    NewtonFailed { starts: usize },
    #[error("rejection sampler acceptance rate {rate:e} below 1e-3 after {attempts} attempts")]
    LowAcceptance { rate: f64, attempts: usize },
    #[error("backend failure: {0}")]
    Backend(String),
}
