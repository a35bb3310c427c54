//! Command-line front end: configuration handling and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Overrides, RunConfig, CACHE_ENV};
pub use error::{CliError, CliResult};
