//! Command-line front end: JSON job configs in, CSV/JSON documents out.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{Options, Output};
pub use error::{CliError, CliResult};
