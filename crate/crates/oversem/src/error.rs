//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0} (supported range 1..=15)")]
    InvalidOrder(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("geometry error in element {elem}: {msg}")]
    Geometry { elem: u64, msg: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("collective error: {0}")]
    Collective(String),

    #[error("state error: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error at line {line}: {msg}")]
    ConfigAt { line: usize, msg: String },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("harness failure: rank {rank} {msg}")]
    Harness { rank: usize, msg: String },

    #[error("setup error: {0}")]
    Setup(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigAt { .. } => 2,
            Error::Harness { .. } => 4,
            _ => 3,
        }
    }
}
