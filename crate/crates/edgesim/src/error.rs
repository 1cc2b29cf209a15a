//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A calibration table was loaded with no entries.
    #[error("calibration table `{table}` is empty")]
    EmptyCalibration { table: &'static str },

    /// A calibration table violates one of its structural invariants.
    #[error("calibration table `{table}`: {reason}")]
    Calibration { table: &'static str, reason: String },

    /// A prediction was queried with an out-of-domain argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The experiment configuration is inconsistent (duplicate ids,
    /// missing edge server, bad references, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A referenced file could not be read.
    #[error("cannot read `{path}`: {source}")]
    FileRead {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A config or profile file does not match the expected schema.
    #[error("schema violation in `{path}`: {message}")]
    Schema { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// The event loop exceeded its safety bound without all tasks
    /// reaching a terminal state.
    #[error(
        "simulation did not terminate within {events} events (virtual clock {clock_ms:.3} ms)"
    )]
    Runaway { events: u64, clock_ms: f64 },
}
