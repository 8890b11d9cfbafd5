//! Command-line driver for the `kp-core` experiments: configuration,
//! orchestration and result files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Format, Overrides, RunConfig};
pub use error::{CliError, CliResult};
