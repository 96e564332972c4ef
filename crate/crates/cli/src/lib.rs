//! File formats, training, evaluation and experiment drivers around `acvis-core`.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod format;
pub mod gradcheck;
pub mod infer;
pub mod train;

pub use error::{CliError, Result};
