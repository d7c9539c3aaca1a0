//! File formats, parallel protocol execution and the `ramannet` command-line
//! tool, built on [`ramannet_core`].

pub mod cli;
pub mod error;
pub mod exec;
pub mod files;
pub mod io;
pub mod manifest;

pub use error::{CliError, Result};
