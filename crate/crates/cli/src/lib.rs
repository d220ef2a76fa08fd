//! Command-line front end: argument parsing, file formats, run manifests and
//! the subcommands built on `undesir-core`.

pub mod cli;
pub mod commands;
pub mod formats;
pub mod output;
pub mod parallel;
pub mod report;

pub use commands::run;
