//! Command-line front end: config files, experiment runs, CSV and SVG output.

pub mod commands;
pub mod config;
pub mod io;
pub mod plot;

pub use commands::{execute, Cli, CliError};
pub use config::{ConfigError, RunConfig};
