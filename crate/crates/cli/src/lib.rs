//! Command-line front end: dataset generation, training, evaluation,
//! ablation suites and report emission on top of [`adaptseg`].

use std::path::Path;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;
pub mod table;

pub use commands::run;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Inputs that fail their consistency checks (exit 2).
    #[error("{0}")]
    Validation(String),
    /// Anything that goes wrong while running (exit 3).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<adaptseg::Error> for CliError {
    fn from(e: adaptseg::Error) -> Self {
        use adaptseg::envsim::EnvError;
        match &e {
            adaptseg::Error::Config(_) => CliError::Usage(e.to_string()),
            adaptseg::Error::Checkpoint { .. } => CliError::Validation(e.to_string()),
            adaptseg::Error::Env(EnvError::Manifest { .. } | EnvError::Image { .. }) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<adaptseg::envsim::EnvError> for CliError {
    fn from(e: adaptseg::envsim::EnvError) -> Self {
        adaptseg::Error::from(e).into()
    }
}
