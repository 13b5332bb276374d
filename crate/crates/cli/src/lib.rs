//! Library side of the `adcr` binary: run configuration, presets, model
//! loading and the five subcommands.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod models;
pub mod plot;
pub mod presets;

pub use commands::{cmd_correlate, cmd_eval, cmd_gen, cmd_simulate, cmd_train, Ctx, Inputs};
pub use config::RunConfig;
pub use manifest::RunManifest;

/// Exit code for bad configuration or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures during a run.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] adcr_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub(crate) fn field(field: impl std::fmt::Display, reason: impl std::fmt::Display) -> Self {
        CliError::Config(format!("`{field}`: {reason}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_config() => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
