//! Command implementations behind the `autorecon` binary: dataset and model
//! file formats, the run configuration, and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod gradcheck;

pub use config::Config;
pub use error::{CliError, CliResult};
