//! Experiment driver around `savc-core`: configuration files, dataset
//! loading, checkpoints, run reports and the `savc` command line.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{compare_runs, run_experiment, RunOutcome};
