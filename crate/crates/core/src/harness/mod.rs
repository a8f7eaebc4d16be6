//! Experiment plumbing: configuration, parallel replicates, pipelines and result files.

mod config;
mod output;
mod run;

pub use config::{
    Caps, CertifyConfig, ExperimentConfig, GridConfig, Horizons, MatrixOutcome, ModelConfig, Pipeline, SCHEMA_VERSION,
};
pub use output::{Check, ReplicateSummary, Reports, RunResult, Series, SeriesRow, Telemetry};
pub use run::{run_experiment, run_replicates, with_threads};
pub use crate::rng::derive_stream;
pub use crate::stats::fit_rate;
