//! Multi-seed experiment execution.

use std::fmt;
use std::path::{Path, PathBuf};

use ist_core::clustering::{ClusterMethod, ClusterSpec, Clusterer};
use ist_core::dataset::{
    load_csv, load_idx, split_ssl, standardize, DataError, Dataset, SslSplit, StandardizationStats,
};
use ist_core::selftrain::{train, Mode, SelfTrainConfig, TrainingTrajectory};
use ist_core::stats::median;
use ndarray::concatenate;
use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::output::{read_csv_rows, write_atomic, write_csv_rows, write_json};
use crate::report::{ComparisonReport, ReportCell};
use crate::BenchError;

pub const TRAJECTORY_DIR: &str = "trajectories";
pub const ACCURACY_PLOT: &str = "plot_accuracy_by_round.csv";
pub const CLUSTER_TIME_PLOT: &str = "plot_cluster_time.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CLUSTER_TIME_CSV: &str = "cluster_time.csv";
pub const CLUSTER_TIME_CELLS_CSV: &str = "cluster_time_cells.csv";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads for independent runs; `0` uses every available core.
    pub workers: usize,
    /// Overrides the configured output directory.
    pub out_dir: Option<PathBuf>,
    /// Skip writing files (the outcome is still returned).
    pub dry: bool,
}

impl RunOptions {
    pub fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| cfg.output_dir.clone())
    }
}

/// One arm of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    St,
    Ist(ClusterMethod),
}

impl Arm {
    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::St => f.write_str("st"),
            Arm::Ist(m) => write!(f, "ist-{m}"),
        }
    }
}

/// ST first (when enabled), then one incremental arm per configured method.
pub fn arms(cfg: &ExperimentConfig) -> Vec<Arm> {
    let st = cfg.include_st.then_some(Arm::St);
    st.into_iter()
        .chain(cfg.methods.iter().map(|&m| Arm::Ist(m)))
        .collect()
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, BenchError> {
    let ds = match spec {
        DatasetSpec::Blobs(b) => b.generate()?,
        DatasetSpec::Csv { path, label_column } => load_csv(path, Some(label_column))?,
        DatasetSpec::Idx {
            images,
            labels,
            max_rows,
        } => {
            let ds = load_idx(images, labels)?;
            match max_rows {
                Some(m) if *m < ds.len() => ds.select(&(0..*m).collect::<Vec<_>>()),
                _ => ds,
            }
        }
    };
    Ok(ds)
}

/// Splits `ds` for `seed` and, if configured, standardizes all three views with
/// statistics of the labeled and unlabeled rows.
pub fn prepare_split(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SslSplit, BenchError> {
    let budget = cfg.split.labels_per_class;
    let split = split_ssl(ds, budget, cfg.split.test_fraction, seed).map_err(|e| match e {
        DataError::ClassTooSmall { .. } => BenchError::InfeasibleBudget {
            budget,
            reason: e.to_string(),
        },
        other => BenchError::Data(other),
    })?;
    if !cfg.standardize {
        return Ok(split);
    }
    let train_rows = concatenate(
        Axis(0),
        &[split.labeled.features(), split.unlabeled.features()],
    )
    .expect("labeled and unlabeled share their columns");
    let stats = StandardizationStats::fit(train_rows.view());
    let labeled_x = stats.apply(split.labeled.features())?;
    let unlabeled_x = stats.apply(split.unlabeled.features())?;
    let test_x = stats.apply(split.test.features())?;
    Ok(SslSplit {
        labeled: split.labeled.with_features(labeled_x)?,
        unlabeled: split.unlabeled.with_features(unlabeled_x)?,
        test: split.test.with_features(test_x)?,
    })
}

/// Clustering used by the `method` arm: the configured one when it names the
/// same method, otherwise that method's defaults.
pub fn clustering_for(
    cfg: &ExperimentConfig,
    method: ClusterMethod,
    class_count: usize,
    seed: u64,
) -> ClusterSpec {
    match &cfg.selftrain.clustering {
        Some(spec) if spec.method() == method => spec.clone().with_seed(seed),
        _ => ClusterSpec::default_for(method, class_count, seed),
    }
}

/// Self-training configuration for one arm and seed.
pub fn arm_config(
    cfg: &ExperimentConfig,
    arm: Arm,
    class_count: usize,
    seed: u64,
) -> SelfTrainConfig {
    let base = cfg.selftrain.clone().with_seed(seed);
    match arm {
        Arm::St => SelfTrainConfig {
            mode: Mode::St,
            clustering: None,
            ..base
        },
        Arm::Ist(m) => SelfTrainConfig {
            mode: Mode::Ist,
            clustering: Some(clustering_for(cfg, m, class_count, seed)),
            ..base
        },
    }
}

/// A finished (possibly failed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub arm: Arm,
    pub seed: u64,
    pub config: SelfTrainConfig,
    pub trajectory: TrainingTrajectory,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn cell(&self) -> ReportCell {
        ReportCell::from_trajectory(&self.arm.label(), &self.trajectory, self.error.clone())
    }

    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.arm, self.seed)
    }
}

pub fn run_arm(split: &SslSplit, cfg: &ExperimentConfig, arm: Arm, seed: u64) -> RunRecord {
    let st_cfg = arm_config(cfg, arm, split.class_count(), seed);
    let result = train(
        &split.labeled,
        &split.unlabeled,
        &split.test,
        &cfg.backbone,
        &st_cfg,
    );
    let (trajectory, error) = match result {
        Ok(run) => (run.trajectory, None),
        Err(e) => {
            let partial = e
                .partial_trajectory()
                .cloned()
                .unwrap_or_else(|| TrainingTrajectory {
                    mode: st_cfg.mode,
                    cluster_method: match arm {
                        Arm::St => None,
                        Arm::Ist(m) => Some(m),
                    },
                    seed,
                    n_labeled: split.labeled.len(),
                    n_unlabeled: split.unlabeled.len(),
                    rounds: Vec::new(),
                    cluster_fits: 0,
                    failure: None,
                });
            (partial, Some(e.to_string()))
        }
    };
    RunRecord {
        arm,
        seed,
        config: st_cfg,
        trajectory,
        error,
    }
}

/// Everything a `run` produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ComparisonReport,
    pub runs: Vec<RunRecord>,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn is_partial(&self) -> bool {
        self.report.failed_cells() > 0
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, BenchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))
}

/// Runs every arm for every seed and writes all outputs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ExperimentOutcome, BenchError> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    run_on_dataset(&ds, cfg, opts, &opts.output_dir(cfg))
}

fn run_on_dataset(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    out_dir: &Path,
) -> Result<ExperimentOutcome, BenchError> {
    let splits = cfg
        .seeds
        .iter()
        .map(|&s| prepare_split(ds, cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(Arm, usize)> = arms(cfg)
        .into_iter()
        .flat_map(|arm| (0..cfg.seeds.len()).map(move |i| (arm, i)))
        .collect();
    let pool = worker_pool(opts.workers)?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(arm, i)| run_arm(&splits[i], cfg, arm, cfg.seeds[i]))
            .collect()
    });
    let report = ComparisonReport::from_cells(
        cfg.display_name(),
        runs.iter().map(RunRecord::cell).collect(),
    );
    let outcome = ExperimentOutcome {
        report,
        runs,
        out_dir: out_dir.to_path_buf(),
    };
    if !opts.dry {
        write_outputs(&outcome, cfg)?;
    }
    Ok(outcome)
}

/// One point of the accuracy-by-round curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub acc: f64,
    pub pool_size: usize,
    pub processed: usize,
    pub cum_seconds: f64,
}

/// Clustering cost of one incremental run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTimePoint {
    pub method: String,
    pub seed: u64,
    pub cluster_seconds: f64,
}

pub fn accuracy_points(runs: &[RunRecord]) -> Vec<AccuracyPoint> {
    runs.iter()
        .flat_map(|r| {
            r.trajectory.rounds.iter().map(move |round| AccuracyPoint {
                method: r.arm.label(),
                seed: r.seed,
                round: round.round,
                acc: round.acc,
                pool_size: round.pool_size,
                processed: round.processed,
                cum_seconds: round.cum_seconds,
            })
        })
        .collect()
}

pub fn cluster_time_points(runs: &[RunRecord]) -> Vec<ClusterTimePoint> {
    runs.iter()
        .filter(|r| matches!(r.arm, Arm::Ist(_)) && !r.trajectory.is_empty())
        .map(|r| ClusterTimePoint {
            method: r.arm.label(),
            seed: r.seed,
            cluster_seconds: r.trajectory.cluster_seconds(),
        })
        .collect()
}

fn write_outputs(outcome: &ExperimentOutcome, cfg: &ExperimentConfig) -> Result<(), BenchError> {
    let dir = &outcome.out_dir;
    let traj_dir = dir.join(TRAJECTORY_DIR);
    for run in &outcome.runs {
        let stem = run.file_stem();
        write_atomic(&traj_dir.join(format!("{stem}.csv")), |buf| {
            run.trajectory
                .write_csv_to(buf)
                .map_err(|e| BenchError::Output(e.to_string()))
        })?;
        write_json(
            &traj_dir.join(format!("{stem}.json")),
            &run.trajectory.summary(&run.config),
        )?;
    }
    outcome.report.write(dir)?;
    write_csv_rows(
        &dir.join(ACCURACY_PLOT),
        &accuracy_points(&outcome.runs),
        &[
            "method",
            "seed",
            "round",
            "acc",
            "pool_size",
            "processed",
            "cum_seconds",
        ],
    )?;
    write_csv_rows(
        &dir.join(CLUSTER_TIME_PLOT),
        &cluster_time_points(&outcome.runs),
        &["method", "seed", "cluster_seconds"],
    )?;
    write_json(&dir.join("config.json"), cfg)
}

pub fn read_accuracy_points(dir: &Path) -> Result<Vec<AccuracyPoint>, BenchError> {
    read_csv_rows(&dir.join(ACCURACY_PLOT))
}

pub fn read_cluster_time_points(dir: &Path) -> Result<Vec<ClusterTimePoint>, BenchError> {
    read_csv_rows(&dir.join(CLUSTER_TIME_PLOT))
}

/// One row of the merged budget sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub method: String,
    pub seed: u64,
    pub acc: Option<f64>,
    pub seconds: f64,
    pub round0_acc: Option<f64>,
    pub status: crate::report::CellStatus,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub budgets: Vec<(usize, ExperimentOutcome)>,
    pub rows: Vec<SweepRow>,
    pub out_dir: PathBuf,
}

impl SweepOutcome {
    pub fn is_partial(&self) -> bool {
        self.budgets.iter().any(|(_, o)| o.is_partial())
    }
}

pub fn budget_dir(out: &Path, budget: usize) -> PathBuf {
    out.join(format!("budget_{budget}"))
}

/// Runs the full comparison once per labels-per-class budget. Every budget is
/// checked against every seed before any run starts.
pub fn sweep_labeled_budget(
    cfg: &ExperimentConfig,
    budgets: &[usize],
    opts: &RunOptions,
) -> Result<SweepOutcome, BenchError> {
    cfg.validate()?;
    if budgets.is_empty() {
        return Err(crate::config::ConfigError::Invalid("the budget list is empty".into()).into());
    }
    if let Some(&b) = budgets.iter().find(|&&b| b == 0) {
        return Err(BenchError::InfeasibleBudget {
            budget: b,
            reason: "at least one label per class is required".into(),
        });
    }
    let ds = load_dataset(&cfg.dataset)?;
    for &budget in budgets {
        for &seed in &cfg.seeds {
            split_ssl(&ds, budget, cfg.split.test_fraction, seed).map_err(|e| {
                BenchError::InfeasibleBudget {
                    budget,
                    reason: e.to_string(),
                }
            })?;
        }
    }
    let out = opts.output_dir(cfg);
    let mut outcomes = Vec::with_capacity(budgets.len());
    let mut rows = Vec::new();
    for &budget in budgets {
        let mut sub = cfg.clone();
        sub.split.labels_per_class = budget;
        let outcome = run_on_dataset(&ds, &sub, opts, &budget_dir(&out, budget))?;
        rows.extend(outcome.report.cells.iter().map(|c| SweepRow {
            budget,
            method: c.method.clone(),
            seed: c.seed,
            acc: c.final_acc,
            seconds: c.total_seconds,
            round0_acc: c.round0_acc,
            status: c.status,
        }));
        outcomes.push((budget, outcome));
    }
    if !opts.dry {
        write_csv_rows(
            &out.join(SWEEP_CSV),
            &rows,
            &[
                "budget",
                "method",
                "seed",
                "acc",
                "seconds",
                "round0_acc",
                "status",
            ],
        )?;
    }
    Ok(SweepOutcome {
        budgets: outcomes,
        rows,
        out_dir: out,
    })
}

pub fn read_sweep(dir: &Path) -> Result<Vec<SweepRow>, BenchError> {
    read_csv_rows(&dir.join(SWEEP_CSV))
}

/// One clustering fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub method: ClusterMethod,
    pub seed: u64,
    pub fit_seconds: Option<f64>,
    pub clusters: Option<usize>,
    pub error: Option<String>,
}

/// Fit time of one method across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: ClusterMethod,
    pub runs: usize,
    pub failed: usize,
    pub mean_fit_seconds: Option<f64>,
    pub median_fit_seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTimingTable {
    pub rows: Vec<TimingRow>,
    pub cells: Vec<TimingCell>,
}

impl ClusterTimingTable {
    pub fn row(&self, method: ClusterMethod) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn is_partial(&self) -> bool {
        self.rows.iter().any(|r| r.failed > 0)
    }

    pub fn from_cells(methods: &[ClusterMethod], cells: Vec<TimingCell>) -> Self {
        let rows = methods
            .iter()
            .map(|&m| {
                let mine: Vec<&TimingCell> = cells.iter().filter(|c| c.method == m).collect();
                let secs: Vec<f64> = mine.iter().filter_map(|c| c.fit_seconds).collect();
                TimingRow {
                    method: m,
                    runs: mine.len(),
                    failed: mine.len() - secs.len(),
                    mean_fit_seconds: (!secs.is_empty())
                        .then(|| secs.iter().sum::<f64>() / secs.len() as f64),
                    median_fit_seconds: median(&secs),
                    error: mine.iter().find_map(|c| c.error.clone()),
                }
            })
            .collect();
        Self { rows, cells }
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        write_csv_rows(
            &dir.join(CLUSTER_TIME_CSV),
            &self.rows,
            &[
                "method",
                "runs",
                "failed",
                "mean_fit_seconds",
                "median_fit_seconds",
                "error",
            ],
        )?;
        write_csv_rows(
            &dir.join(CLUSTER_TIME_CELLS_CSV),
            &self.cells,
            &["method", "seed", "fit_seconds", "clusters", "error"],
        )
    }

    pub fn read(dir: &Path) -> Result<Self, BenchError> {
        Ok(Self {
            rows: read_csv_rows(&dir.join(CLUSTER_TIME_CSV))?,
            cells: read_csv_rows(&dir.join(CLUSTER_TIME_CELLS_CSV))?,
        })
    }
}

/// Fits every configured method on each seed's standardized unlabeled split
/// and records the fit time. Fits run one at a time so timings do not compete
/// for cores.
pub fn cluster_timing(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ClusterTimingTable, BenchError> {
    cfg.validate()?;
    if cfg.methods.is_empty() {
        return Err(crate::config::ConfigError::Invalid(
            "`methods` is empty; nothing to time".into(),
        )
        .into());
    }
    let ds = load_dataset(&cfg.dataset)?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let split = prepare_split(&ds, cfg, seed)?;
        let (x, _) = standardize(split.unlabeled.features());
        for &method in &cfg.methods {
            let spec = clustering_for(cfg, method, split.class_count(), seed);
            cells.push(match spec.fit(x.view()) {
                Ok(m) => TimingCell {
                    method,
                    seed,
                    fit_seconds: Some(m.fit_seconds),
                    clusters: Some(m.k()),
                    error: None,
                },
                Err(e) => TimingCell {
                    method,
                    seed,
                    fit_seconds: None,
                    clusters: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let table = ClusterTimingTable::from_cells(&cfg.methods, cells);
    if !opts.dry {
        table.write(&opts.output_dir(cfg))?;
    }
    Ok(table)
}
