//! Experiment orchestration: configuration, multi-seed runs, CSV output,
//! aggregation and plot data.
//!
//! An experiment directory looks like
//!
//! ```text
//! <out>/config.json
//! <out>/runs/<metric>/seed_<seed>.csv
//! <out>/aggregate.csv
//! ```

pub mod aggregate;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod runs;

pub use aggregate::{aggregate_files, collect_run_files, mean_ci95, AggregateRow};
pub use config::{
    Arch, DatasetConfig, DatasetName, ExperimentConfig, MetricLabel, ModelConfig, Schedule, PRESETS,
};
pub use experiment::{
    run_experiment, run_experiment_with, sweep_p, ExperimentOutput, PairedRow, SweepOutput,
};
pub use plot::plot_data;
