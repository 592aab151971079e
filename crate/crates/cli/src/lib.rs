//! Command-line driver and local session service.

pub mod app;
pub mod journal;
pub mod output;
pub mod protocol;
pub mod session;

pub use app::{run, Cli, CliError, CliResult};
