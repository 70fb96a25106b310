//! Experiment runner behind the `fedmap` binary: TOML configs, sweeps,
//! results and trace CSVs, verification and report tables.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod synth;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::CliError;
