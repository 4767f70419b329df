use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("no workers available")]
    NoWorkers,

    #[error("worker {worker} failed: {message}")]
    Worker { worker: String, message: String },

    #[error("remote error: {0}")]
    Remote(String),

    #[error("store corrupt at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("duplicate record (episode {episode}, sequence {sequence})")]
    Duplicate { episode: u64, sequence: u32 },

    #[error(transparent)]
    Core(#[from] tagfuzz_core::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
