use thiserror::Error;

/// Errors produced by the numerical kernels and their drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("point lies on a jump hyperplane (x·ν = {offset}); perturb the query")]
    OnJumpPlane { offset: f64 },

    #[error("quadrature rule failed its quality check: {0}")]
    RuleQuality(String),

    #[error("non-finite integrand value at node {index}")]
    NonFinite { index: usize },

    #[error("grid spacing h = {h} does not resolve eps = {eps} (need h <= eps/{factor})")]
    GridCapability { h: f64, eps: f64, factor: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
