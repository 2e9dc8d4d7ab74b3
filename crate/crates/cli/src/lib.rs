//! Command-line front end of `streamopt`: file formats, synthetic
//! instances and the subcommands of the `streamopt` binary.

pub mod commands;
pub mod error;
pub mod format;
pub mod synth;

pub use commands::{run, Cli};
pub use error::{exit, CliError, ParseError, Result};
