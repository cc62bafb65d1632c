//! File formats and subcommands behind the `splatdiff` binary.

pub mod commands;
pub mod error;
pub mod ppm;
pub mod report;
pub mod scene_file;

pub use error::{CliError, CliResult};
