use thiserror::Error;

/// Errors produced by the estimation and solver routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("starting value for component {component} collapses into the span of prior loadings in source {source_index}")]
    DegenerateStart { component: usize, source_index: usize },
    #[error("projection of source block {source_index} is zero")]
    DegenerateProjection { source_index: usize },
    #[error("extreme solutions explain the same variance; scaled variance undefined")]
    DegenerateScaling,
    #[error("rank-deficient subspace basis")]
    DegenerateSubspace,
    #[error("no feasible KKT root for source {source_index} at rho = {rho}")]
    RhoEscalationNeeded { source_index: usize, rho: f64 },
    #[error("ADMM did not converge after {escalations} rho escalations (last rho = {rho})")]
    NonConvergence { escalations: usize, rho: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
