//! Outlier-robust, structured-sparse principal component analysis for
//! multiple related data sources.
//!
//! The pipeline is: estimate smoothed robust per-source covariances
//! ([`ssmrcd`]), solve the global-local sparse PCA problem with a consensus
//! ADMM ([`admm`]) from informed starting values ([`start`]), pick the
//! sparsity parameters ([`tuning`]) and evaluate ([`metrics`],
//! [`simulation`]).

pub mod admm;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod simulation;
pub mod ssmrcd;
pub mod start;
pub mod tuning;
pub mod types;

pub use error::{Error, Result};
pub use numerics::SymMatrix;
pub use types::{CovarianceSet, LoadingsMatrix, LoadingsSet, MultiSourceData, StackedVector};
