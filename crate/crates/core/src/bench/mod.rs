//! Experiment harness: metrics, a synthetic two-domain generator, the
//! experiment runner and report tables.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod synth;

pub use experiment::{
    fit_on_split, grid_configs, prepare_cell, run_cell, run_experiment, run_grid, run_on_datasets, score, write_result, CellResult, ExperimentConfig, ExperimentResult,
    Method, PreparedCell, TrainedModel,
};
pub use metrics::{accuracy, macro_accuracy};
pub use report::{emit_report, load_results, render_table};
pub use synth::{stratified_counts, synthesize_domains, synthesize_with_groups, write_dataset_csv, SyntheticDomain, SyntheticDomainSpec};
