//! File formats, the run configuration, the command-line pipeline and the
//! plots built on `lssl-core`.

pub mod cache;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metadata;
pub mod plots;
pub mod tensor_file;

pub use config::RunConfig;
pub use error::{CliError, Result};
