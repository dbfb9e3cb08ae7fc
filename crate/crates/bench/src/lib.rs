//! Experiment harness comparing classical self-training with incremental
//! self-training across seeds, clustering methods and label budgets.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod report;
pub mod runner;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{preset, ConfigError, DatasetSpec, ExperimentConfig, SplitSpec};
pub use report::{AggregateRow, CellStatus, ComparisonReport, ReportCell};
pub use runner::{
    cluster_timing, run_experiment, sweep_labeled_budget, Arm, ClusterTimingTable,
    ExperimentOutcome, RunOptions, SweepOutcome,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("labels_per_class = {budget} is infeasible: {reason}")]
    InfeasibleBudget { budget: usize, reason: String },
    #[error("dataset: {0}")]
    Data(#[from] ist_core::DataError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Output(String),
    #[error("cannot start the worker pool: {0}")]
    Pool(String),
}

impl BenchError {
    /// Errors caused by the configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            BenchError::Config(_) | BenchError::InfeasibleBudget { .. }
        )
    }
}
