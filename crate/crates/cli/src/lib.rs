//! Experiment runner: configuration files, run directories, and the
//! subcommand implementations behind the `cpool` binary.

pub mod commands;
pub mod config;

pub use config::{ExperimentConfig, Pooling, Task};
