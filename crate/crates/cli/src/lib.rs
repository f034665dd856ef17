//! Configuration, orchestration and file output behind the `obstacle-mcf` binary.

pub mod config;
pub mod error;
pub mod experiment;
pub mod snapshot;

pub use config::{load_config, parse_config, RunConfig, OUTPUT_DIR_ENV};
pub use error::{CliError, CliResult, ExitStatus};
