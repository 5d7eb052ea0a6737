//! Experiment runner for `demp-core`: TOML-configured training runs, theory
//! simulators and schedule dumps, all emitting CSV/JSON.

pub mod commands;
pub mod config;
pub mod runner;

pub use commands::CliError;
pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Variant};
