//! Configs, file formats, parallel runs and the `slcchain` command line
//! on top of `slcchain-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod model_spec;
pub mod output;
pub mod setup;

pub use config::{CheckKind, ExperimentConfig, Mode};
pub use error::{CliError, CliResult};
pub use model_spec::ModelSpec;
