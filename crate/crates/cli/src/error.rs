use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    NonConvergence(String),
    #[error(transparent)]
    Core(#[from] mspca_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 for bad input, 3 for numerical non-convergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use mspca_core::Error as E;
        match self {
            CliError::Input(_) | CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Write { .. } => 1,
            CliError::Core(e) => match e {
                E::InvalidMatrix(_) | E::InvalidArgument(_) | E::Dimension(_) | E::Index(_) | E::InsufficientData(_) => 2,
                E::NonConvergence { .. } | E::RhoEscalationNeeded { .. } => 3,
                _ => 1,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("CSV error: {e}"))
    }
}
