//! Command implementations behind the `firefit` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_fit, cmd_gen_case, cmd_ignition, cmd_init};
pub use config::RunConfig;
pub use error::CliError;
