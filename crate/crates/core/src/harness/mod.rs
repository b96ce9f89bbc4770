//! Experiment orchestration: configuration, seeded runs, accuracy
//! matrices, grid search and CSV output.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{apply_override, ExperimentConfig, Generator, DATA_ENV};
pub use output::{emit_results, output_paths, read_detail, render_table, series, table, DetailRow, SeriesPoint};
pub use runner::{
    average_accuracy, build_scenario, grid_search, load_datasets, mean_std, prepare, run_experiment, run_seed, ExperimentResult, GridResult,
    ResultMatrix, SeedRun, DEFAULT_LAMBDAS,
};
