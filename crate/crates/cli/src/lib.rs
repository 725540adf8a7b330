//! Batch commands: train, eval, audit, synth and degree-stats.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
