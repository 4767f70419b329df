use std::io;

use thiserror::Error;

/// Errors produced by the fuzzing core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("template error: {0}")]
    Template(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),

    #[error("id {id} out of vocabulary range (size {size})")]
    IdOutOfRange { id: u32, size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at {context}: loss is {loss}")]
    Diverged { context: String, loss: f64 },

    #[error("drcov parse error at byte {offset}: {message}")]
    Drcov { offset: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("cannot sample from an empty replay memory")]
    EmptyReplay,

    #[error("harness failure: {0}")]
    Harness(String),

    #[error("mismatched support: {0} vs {1}")]
    MismatchedSupport(usize, usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
