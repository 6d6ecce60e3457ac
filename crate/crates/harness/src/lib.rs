//! Seeded experiment sweeps over `arlab-core`: config loading, execution,
//! `results.csv` and manifest emission, aggregation and SVG plots.

pub mod aggregate;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod plot;
pub mod results;

pub use config::{ExperimentConfig, ExperimentKind};
pub use results::ResultRow;

/// Failure categories, each with its process exit code.
#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("numerical guard exceeded: {0}")]
    Guard(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Guard(_) => 3,
            HarnessError::Diverged(_) => 4,
            HarnessError::Io(_) => 1,
        }
    }
}

impl From<arlab_core::Error> for HarnessError {
    fn from(e: arlab_core::Error) -> Self {
        use arlab_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::Unstable { .. } | E::Unsupported(_) => HarnessError::Config(e.to_string()),
            E::LyapunovSingular | E::Singular(_) | E::NotPositiveDefinite { .. } | E::GuardExceeded(_) => {
                HarnessError::Guard(e.to_string())
            }
            E::Diverged { .. } => HarnessError::Diverged(e.to_string()),
            E::Io(m) => HarnessError::Io(m),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
