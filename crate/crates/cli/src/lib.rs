//! File formats and commands behind the `rtmix` binary.

pub mod commands;
pub mod error;
pub mod files;
pub mod pgm;
pub mod prediction;

pub use error::CliError;
