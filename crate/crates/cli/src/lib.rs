//! Batch driver for the regularity-loss construction: configuration, commands, reports and the verify battery.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
