//! Command-line experiment harness: configuration, multi-seed runs and
//! result files.

pub mod config;
pub mod experiment;

pub use config::{parse_config, ExperimentConfig, RunArgs};
pub use experiment::{
    curves_to_csv, manifest_path, read_curves_csv, run_experiment, ExperimentResult, RunManifest,
    CSV_HEADER,
};
