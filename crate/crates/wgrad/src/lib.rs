//! File formats, run manifests and the `wgrad` command-line front end on top
//! of [`wgrad_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod raster;

pub use error::{CliError, Result};
