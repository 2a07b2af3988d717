//! Command implementations behind the `forge` binary.

pub mod clients;
pub mod commands;
pub mod config;
pub mod demo;
pub mod io;

use std::path::PathBuf;

pub use clients::{ClientFactory, LiveFactory};
pub use config::{BenchConfig, ConfigError, PipelineConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup: {0}")]
    Setup(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad input: {0}")]
    Data(String),
    /// The command ran but its checks did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Setup(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Data(_) | CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}
