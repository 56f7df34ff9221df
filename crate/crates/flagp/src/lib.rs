//! File formats, the `flagp` command line and wall-clock benchmarks on top
//! of [`flagp_core`].

pub mod bench;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, CliResult};
