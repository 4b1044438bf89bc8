//! Reproducible experiment runner: TOML configs in, JSON/CSV artifacts and a
//! replayable manifest out.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod recipes;

use std::fmt;

pub use commands::{execute, replay, run_command, ReplayOutcome};
pub use config::{ExperimentConfig, Overrides};
pub use manifest::Manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(mmq_core::Error),
    Io(std::io::Error),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mmq_core::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Core(e) => match e {
                E::InvalidGenerator(_)
                | E::NotIrreducible { .. }
                | E::Dimension(_)
                | E::Validation(_)
                | E::Policy(_)
                | E::Centering { .. }
                | E::HorizonTooShort { .. }
                | E::InvalidArgument(_) => EXIT_CONFIG,
                E::Numerical(_) | E::NoConvergence { .. } | E::NonMonotoneStencil { .. } | E::InvariantBreach(_) => {
                    EXIT_NUMERICAL
                }
            },
            Self::Io(_) | Self::Other(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mmq_core::Error> for CliError {
    fn from(e: mmq_core::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}
