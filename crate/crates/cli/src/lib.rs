//! Front end for the conevol laboratory: config resolution, run manifests,
//! the subcommands and the property suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod suite;

pub use error::CliError;
