use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Each variant maps onto one of the process exit codes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, layouts or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value left the domain of a function (boundary of the simplex,
    /// non-positive gamma draw, concentration at or below one for the mode).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite losses, gradients or parameters.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Wraps another error with the round (and optionally client) it came from.
    #[error("round {round}{}: {source}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    InRound {
        round: usize,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    /// Wraps another error with the strategy/seed of a run.
    #[error("run {label} (seed {seed}): {source}")]
    InRun {
        label: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_round(self, round: usize, client: Option<usize>) -> Self {
        Error::InRound {
            round,
            client,
            source: Box::new(self),
        }
    }

    /// The innermost error, with round/run context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InRound { source, .. } | Error::InRun { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 config, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Numerical(_) => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
            Error::InRound { .. } | Error::InRun { .. } => unreachable!("root() strips context"),
        }
    }
}
