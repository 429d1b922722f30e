//! Command-line front end for `lvgm-core`: configuration, file formats and
//! the `generate`, `fit`, `select`, `evaluate` and `experiment` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{run, Command, Flags};
pub use error::{CliError, CliResult};
