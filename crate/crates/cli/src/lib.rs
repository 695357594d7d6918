//! Batch front end for `bmms`: simulate data, fit modular multiscale
//! models, predict and summarise.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use error::{CliError, CliResult};
