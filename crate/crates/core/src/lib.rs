//! Coverage-guided generative HTML fuzzing: a grammar baseline, a character-level
//! TCN generator, a DDQN tag-selection agent and the coverage plumbing around them.

pub mod analysis;
pub mod checkpoint;
pub mod corpus;
pub mod coverage;
pub mod ddqn;
pub mod env;
pub mod error;
pub mod grammar;
pub mod kv;
pub mod nn;
pub mod tcn;

pub use error::{Error, Result};
