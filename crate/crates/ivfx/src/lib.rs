//! Files, datasets, checkpoints, evaluation, profiling and the command-line
//! workflows around `ivfx-core`.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod format;
pub mod preview;
pub mod profile;
pub mod threads;

pub use error::{Error, Result};
