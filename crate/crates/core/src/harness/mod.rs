//! Experiment harness: data generation and ingestion, configuration, the
//! experiment runners and their tabular output.

pub mod config;
mod dataio;
mod experiments;
mod generate;
mod output;
mod pool;

pub use config::{
    ExperimentConfig, ExperimentKind, ModelChoice, MulticlassGenerator, PipelineSettings,
    QuantileDemoConfig, RealdataConfig, ScalingConfig, StabilityConfig,
};
pub use dataio::{
    fit_standardizer, load_csv, CsvSchema, LabelColumn, LoadedCsv, StandardizationStats,
};
pub use experiments::{run_experiment, RunSummary};
pub use generate::{gen_logistic, gen_logistic_with, gen_multiclass, logistic_truth};
pub use output::{
    aggregate, mean_and_sd, ResultRow, TableWriter, TrialTag, RESULTS_HEADER, SERIES_HEADER,
};
pub use pool::run_ordered;
