//! Comparison reports: one cell per (method, seed) and per-method aggregates.

use std::path::Path;

use ist_core::selftrain::TrainingTrajectory;
use ist_core::stats::{iqr, median};
use serde::{Deserialize, Serialize};

use crate::output::{read_csv_rows, read_json, write_csv_rows, write_json};
use crate::BenchError;

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "report_summary.csv";
pub const REPORT_JSON: &str = "report.json";

/// Method label of the classical self-training baseline.
pub const BASELINE: &str = "st";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub method: String,
    pub seed: u64,
    pub status: CellStatus,
    pub final_acc: Option<f64>,
    /// Accuracy of the supervised fit before any pseudo-labeling.
    pub round0_acc: Option<f64>,
    pub total_seconds: f64,
    pub cluster_seconds: f64,
    pub training_seconds: f64,
    pub total_processed: usize,
    pub rounds: usize,
    pub error: Option<String>,
}

impl ReportCell {
    pub fn from_trajectory(
        method: &str,
        trajectory: &TrainingTrajectory,
        error: Option<String>,
    ) -> Self {
        let failed = error.is_some() || trajectory.failure.is_some();
        let error = error.or_else(|| trajectory.failure.as_ref().map(|f| f.message.clone()));
        Self {
            method: method.to_string(),
            seed: trajectory.seed,
            status: if failed {
                CellStatus::Failed
            } else {
                CellStatus::Ok
            },
            final_acc: if failed { None } else { trajectory.final_acc() },
            round0_acc: trajectory.rounds.first().map(|r| r.acc),
            total_seconds: trajectory.total_seconds(),
            cluster_seconds: trajectory.cluster_seconds(),
            training_seconds: trajectory.training_seconds(),
            total_processed: trajectory.total_processed(),
            rounds: trajectory.len(),
            error,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let bits = |v: Option<f64>| v.map(f64::to_bits);
        self.method == other.method
            && self.seed == other.seed
            && self.status == other.status
            && bits(self.final_acc) == bits(other.final_acc)
            && bits(self.round0_acc) == bits(other.round0_acc)
            && self.total_processed == other.total_processed
            && self.rounds == other.rounds
            && self.error == other.error
    }
}

/// Median and interquartile range per method over its successful cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub baseline: bool,
    pub runs: usize,
    pub failed: usize,
    pub acc_median: Option<f64>,
    pub acc_iqr: Option<f64>,
    pub seconds_median: Option<f64>,
    pub seconds_iqr: Option<f64>,
    pub cluster_seconds_median: Option<f64>,
    pub processed_median: Option<f64>,
}

impl AggregateRow {
    fn from_cells(method: &str, cells: &[&ReportCell]) -> Self {
        let ok: Vec<&ReportCell> = cells.iter().copied().filter(|c| c.is_ok()).collect();
        let acc: Vec<f64> = ok.iter().filter_map(|c| c.final_acc).collect();
        let secs: Vec<f64> = ok.iter().map(|c| c.total_seconds).collect();
        let cluster: Vec<f64> = ok.iter().map(|c| c.cluster_seconds).collect();
        let processed: Vec<f64> = ok.iter().map(|c| c.total_processed as f64).collect();
        Self {
            method: method.to_string(),
            baseline: method == BASELINE,
            runs: cells.len(),
            failed: cells.len() - ok.len(),
            acc_median: median(&acc),
            acc_iqr: iqr(&acc),
            seconds_median: median(&secs),
            seconds_iqr: iqr(&secs),
            cluster_seconds_median: median(&cluster),
            processed_median: median(&processed),
        }
    }

    fn same_outcome(&self, other: &Self) -> bool {
        let bits = |v: Option<f64>| v.map(f64::to_bits);
        self.method == other.method
            && self.baseline == other.baseline
            && self.runs == other.runs
            && self.failed == other.failed
            && bits(self.acc_median) == bits(other.acc_median)
            && bits(self.acc_iqr) == bits(other.acc_iqr)
            && bits(self.processed_median) == bits(other.processed_median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub cells: Vec<ReportCell>,
    pub aggregates: Vec<AggregateRow>,
}

impl ComparisonReport {
    /// Builds aggregates from `cells`, one row per method in order of first
    /// appearance.
    pub fn from_cells(name: impl Into<String>, cells: Vec<ReportCell>) -> Self {
        let aggregates = aggregate(&cells);
        Self {
            name: name.into(),
            cells,
            aggregates,
        }
    }

    /// True when the stored aggregates equal a fresh recomputation.
    pub fn aggregates_match_cells(&self) -> bool {
        aggregate(&self.cells) == self.aggregates
    }

    pub fn methods(&self) -> Vec<&str> {
        self.aggregates.iter().map(|a| a.method.as_str()).collect()
    }

    pub fn aggregate_for(&self, method: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn cells_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ReportCell> + 'a {
        self.cells.iter().filter(move |c| c.method == method)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.name == other.name
            && self.cells.len() == other.cells.len()
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.same_outcome(b))
            && self.aggregates.len() == other.aggregates.len()
            && self
                .aggregates
                .iter()
                .zip(&other.aggregates)
                .all(|(a, b)| a.same_outcome(b))
    }

    /// Writes the cell table, the aggregate table and the JSON report.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        write_csv_rows(&dir.join(REPORT_CSV), &self.cells, &CELL_HEADER)?;
        write_csv_rows(&dir.join(SUMMARY_CSV), &self.aggregates, &AGGREGATE_HEADER)?;
        write_json(&dir.join(REPORT_JSON), self)
    }

    pub fn read_json(dir: &Path) -> Result<Self, BenchError> {
        read_json(&dir.join(REPORT_JSON))
    }

    /// Rebuilds the report from `report.csv`, recomputing the aggregates.
    pub fn read_csv(dir: &Path, name: &str) -> Result<Self, BenchError> {
        Ok(Self::from_cells(
            name,
            read_csv_rows(&dir.join(REPORT_CSV))?,
        ))
    }

    pub fn read_summary_csv(dir: &Path) -> Result<Vec<AggregateRow>, BenchError> {
        read_csv_rows(&dir.join(SUMMARY_CSV))
    }
}

const CELL_HEADER: [&str; 11] = [
    "method",
    "seed",
    "status",
    "final_acc",
    "round0_acc",
    "total_seconds",
    "cluster_seconds",
    "training_seconds",
    "total_processed",
    "rounds",
    "error",
];

const AGGREGATE_HEADER: [&str; 10] = [
    "method",
    "baseline",
    "runs",
    "failed",
    "acc_median",
    "acc_iqr",
    "seconds_median",
    "seconds_iqr",
    "cluster_seconds_median",
    "processed_median",
];

fn aggregate(cells: &[ReportCell]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for c in cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&ReportCell> = cells.iter().filter(|c| c.method == m).collect();
            AggregateRow::from_cells(m, &mine)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: &str, seed: u64, acc: Option<f64>, secs: f64) -> ReportCell {
        ReportCell {
            method: method.into(),
            seed,
            status: if acc.is_some() {
                CellStatus::Ok
            } else {
                CellStatus::Failed
            },
            final_acc: acc,
            round0_acc: acc,
            total_seconds: secs,
            cluster_seconds: 0.0,
            training_seconds: secs,
            total_processed: 10,
            rounds: 12,
            error: acc
                .is_none()
                .then(|| "round 3: diverged, try again".to_string()),
        }
    }

    #[test]
    fn aggregates_use_successful_cells_only() {
        let r = ComparisonReport::from_cells(
            "t",
            vec![
                cell("st", 0, Some(0.5), 1.0),
                cell("st", 1, Some(0.7), 3.0),
                cell("st", 2, None, 9.0),
                cell("ist-kmeans", 0, Some(0.9), 2.0),
            ],
        );
        assert_eq!(r.methods(), vec!["st", "ist-kmeans"]);
        let st = r.aggregate_for("st").unwrap();
        assert!(st.baseline);
        assert_eq!((st.runs, st.failed), (3, 1));
        assert_eq!(st.acc_median, Some(0.6));
        assert_eq!(st.seconds_median, Some(2.0));
        assert_eq!(r.failed_cells(), 1);
        assert!(r.aggregates_match_cells());
    }

    #[test]
    fn stale_aggregates_are_detected() {
        let mut r = ComparisonReport::from_cells("t", vec![cell("st", 0, Some(0.5), 1.0)]);
        r.cells[0].final_acc = Some(0.6);
        assert!(!r.aggregates_match_cells());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = ComparisonReport::from_cells(
            "t",
            vec![
                cell("st", 0, Some(0.1), 1.5),
                cell("st", 1, None, 0.25),
                cell("ist-birch", 0, Some(1.0 / 3.0), 2.0),
            ],
        );
        r.write(dir.path()).unwrap();
        assert_eq!(ComparisonReport::read_json(dir.path()).unwrap(), r);
        assert_eq!(ComparisonReport::read_csv(dir.path(), "t").unwrap(), r);
        assert_eq!(
            ComparisonReport::read_summary_csv(dir.path()).unwrap(),
            r.aggregates
        );
    }
}
