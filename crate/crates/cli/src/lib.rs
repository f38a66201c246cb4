//! Configuration, orchestration and persistence for `kinetic-core` runs.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! abort (non-finite state), 4 resource cap.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod scenario;

pub use config::{parse_config, parse_str, RunMode, ScenarioConfig};
pub use scenario::{run_scenario, Outcome, RunOptions};

use kinetic_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("resource cap: {0}")]
    Resource(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Resource(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Contract(_) | Error::Domain(_) | Error::Stability { .. } => CliError::Config(vec![e.to_string()]),
            Error::BlowUp { .. } | Error::Diagnostic(_) => CliError::Numerical(e.to_string()),
            Error::Resource(_) => CliError::Resource(e.to_string()),
            Error::Io(_) | Error::Format(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
