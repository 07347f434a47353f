//! Library side of the `hippo-lab` binary: config handling, subcommands and
//! the SVG chart writer.

pub mod commands;
pub mod config;
pub mod plot;

use std::fmt;

pub use config::{EvalConfig, RunConfig};

/// Exit status 2: bad configuration or usage.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status 3: training aborted.
pub const EXIT_ABORT: u8 = 3;
/// Exit status 1: a check failed or a run errored.
pub const EXIT_FAIL: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::config(message)
    }

    pub fn fail(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAIL,
            message: message.into(),
        }
    }

    /// Maps a library error: input problems exit with 2, anything else with `code`.
    pub fn from_core(e: hippo_core::Error, code: u8) -> Self {
        use hippo_core::Error as E;
        match e {
            E::Config(_) | E::Argument(_) | E::Usage(_) | E::Format(_) => Self::config(e.to_string()),
            other => Self {
                code,
                message: other.to_string(),
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}
