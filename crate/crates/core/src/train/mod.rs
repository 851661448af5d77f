//! Optimization, evaluation and reporting.

pub mod adam;
pub mod metrics;
pub mod report;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{argmax, confusion_matrix, confusion_rates, ConfusionRates, MetricsReport};
pub use report::{
    aggregate_runs, compare_models, run_repeated, run_seed, ComparisonRow, ComparisonTable, MetricSpread,
    RepeatedReport, RunRecord,
};
pub use trainer::{evaluate_model, evaluate_with_loss, train_model, EpochRecord, TrainConfig, TrainHistory};
