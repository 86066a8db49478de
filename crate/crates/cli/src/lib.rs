//! Experiment harness: configuration, batch runs, statistics and output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod stats;

pub use config::{AdversarySpec, ExperimentConfig, OutFormat};
pub use experiment::{
    run_experiment, run_experiment_with, summarize, Experiment, ExperimentError, Report, RoundRow,
    RunData, Summary,
};
pub use output::{emit, OutputError};
