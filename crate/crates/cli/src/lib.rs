//! Experiment harness behind the `kh` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use config::ExperimentConfig;
pub use report::{Check, Report};
