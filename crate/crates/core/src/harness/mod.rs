//! Experiment configuration, training, run matrices and reports.

mod config;
mod metrics;
mod report;
mod run;
mod train;

pub use config::{ExperimentConfig, CONFIG_KEYS};
pub use metrics::{check_records, metrics_csv, relative_l2, MetricsRecord, METRICS_HEADER};
pub use report::{build_report, gain_percent, write_report, Diagnostics, Report, ReportEntry};
pub use run::{
    load_data, matrix_configs, options, prepared_with_hash, run_experiment, run_matrix, Axis,
    MatrixResult, MatrixRow, RunSummary, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
    RUN_ARTIFACTS, SUMMARY_FILE,
};
pub use train::{
    evaluate, prepare, train, Example, Observer, PreparedData, StepInfo, TrainOptions,
    TrainOutcome,
};
