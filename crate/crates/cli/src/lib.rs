//! Runs, sweeps and validation for the `pjko` binary.

pub mod config;
pub mod exec;

pub use config::{Initial, RunConfig};
pub use exec::{execute_run, execute_sweep, report, validate, Axis, RunOutcome, SweepOutcome};

/// Relative `output` paths are resolved under this directory when it is set.
pub const OUTPUT_ROOT_VAR: &str = "PJKO_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
