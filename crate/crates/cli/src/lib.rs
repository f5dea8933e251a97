//! Batch harness around `roughflow-core`: TOML experiment configs, H-sweeps
//! over seeded replicas, CSV/JSON outputs, SVG figures and the verification
//! suites behind `roughflow verify`.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("check failure: {0}")]
    Check(String),
    #[error("runtime abort: {0}")]
    Runtime(String),
}

impl CliError {
    /// 0 success, 1 check failure, 2 config or input error, 3 runtime abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
