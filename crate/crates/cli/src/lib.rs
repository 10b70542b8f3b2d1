//! Config-driven experiment runner: data, sWeights, one network per training
//! method, learning curves, size sweeps and a checksummed manifest.

pub mod artifacts;
pub mod commands;
pub mod config;

pub use commands::{execute, load_config, CliError, Command, Outcome};
pub use config::{ConfigError, ExperimentConfig};
