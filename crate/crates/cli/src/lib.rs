//! Library side of the `dinsys` command: config parsing, run orchestration and
//! report writers. The binary is a thin clap wrapper around [`execute`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod expr;
pub mod report;

use std::path::{Path, PathBuf};

pub use commands::{cmd_audit, cmd_run, cmd_sweep, execute, Command, Options};
pub use config::{parse_config, parse_config_str, OutputConfig, RunConfig, SweepConfig};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitCode {
    Pass = 0,
    CheckFail = 1,
    RunFail = 2,
    Usage = 64,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// The more severe of two outcomes.
    pub fn worst(self, other: Self) -> Self {
        let rank = |c: Self| match c {
            Self::Pass => 0,
            Self::CheckFail => 1,
            Self::RunFail => 2,
            Self::Usage => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] dinsys_core::Error),
}

impl CliError {
    pub(crate) fn config(path: &Path, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Config { .. }
            | Self::Usage(_)
            | Self::Core(dinsys_core::Error::InvalidArgument(_)) => ExitCode::Usage,
            Self::Io { .. } | Self::Core(_) => ExitCode::RunFail,
        }
    }
}
