//! Classical and incremental self-training loops.
//!
//! Both loops share one round structure. Round 0 fits on the labeled rows only.
//! Every later round pseudo-labels the current pool with the current model,
//! keeps predictions whose confidence reaches the threshold, refits on the
//! labeled rows plus the kept pseudo-labels and evaluates on the test set.
//!
//! The loops differ only in the pool. Classical self-training ([`st_train`])
//! pools every unlabeled row from the start. Incremental self-training
//! ([`ist_train`]) clusters the unlabeled rows once, orders them by certainty
//! and admits one batch of the ordered list per round.

use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{argmax_rows, BackboneSpec, Classifier, ClassifierError};
use crate::clustering::{ClusterError, ClusterMethod, ClusterSpec, ClusterSummary, Clusterer};
use crate::dataset::{standardize, DataError, Dataset, LabeledSet, UnlabeledSet};
use crate::querylist::{
    partition_batches, BatchPartition, BatchSchedule, CertaintyNorm, QueryList, QueryListError,
};

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("invalid self-training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("clustering failed during initialization: {0}")]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    QueryList(#[from] QueryListError),
    #[error("round {round}: {source}")]
    RoundFailed {
        round: usize,
        #[source]
        source: ClassifierError,
        /// Rounds completed before the failure, with the failure marker set.
        trajectory: Box<TrainingTrajectory>,
    },
    #[error("evaluation needs a non-empty labeled test set")]
    EmptyTestSet,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SelfTrainError {
    /// The partial trajectory of a run that failed mid-training.
    pub fn partial_trajectory(&self) -> Option<&TrainingTrajectory> {
        match self {
            SelfTrainError::RoundFailed { trajectory, .. } => Some(trajectory),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    St,
    #[default]
    Ist,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::St => "st",
            Mode::Ist => "ist",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    #[serde(default)]
    pub mode: Mode,
    /// Total rounds including the supervised round 0. Defaults to `T + 4`.
    #[serde(default)]
    pub rounds: Option<usize>,
    /// Minimum confidence for a pseudo-label to enter training.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Sample weight of pseudo-labeled rows.
    #[serde(default = "default_pseudo_weight")]
    pub pseudo_weight: f64,
    #[serde(default)]
    pub schedule: BatchSchedule,
    /// Clustering used to order the unlabeled rows. Defaults to k-means with
    /// one cluster per class.
    #[serde(default)]
    pub clustering: Option<ClusterSpec>,
    #[serde(default)]
    pub certainty_norm: CertaintyNorm,
    /// Keep each pool member's first pseudo-label instead of re-predicting it
    /// every round.
    #[serde(default)]
    pub freeze_labels: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.95
}

fn default_pseudo_weight() -> f64 {
    1.0
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ist,
            rounds: None,
            threshold: default_threshold(),
            pseudo_weight: default_pseudo_weight(),
            schedule: BatchSchedule::default(),
            clustering: None,
            certainty_norm: CertaintyNorm::Global,
            freeze_labels: false,
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn st() -> Self {
        Self {
            mode: Mode::St,
            ..Self::default()
        }
    }

    pub fn ist() -> Self {
        Self::default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = Some(rounds);
        self
    }

    pub fn resolved_rounds(&self) -> usize {
        self.rounds.unwrap_or(self.schedule.rounds + 4)
    }

    /// Clustering for `class_count` classes, seeded from this config.
    pub fn resolved_clustering(&self, class_count: usize) -> ClusterSpec {
        match &self.clustering {
            Some(spec) => spec.clone().with_seed(self.seed),
            None => ClusterSpec::default_for(ClusterMethod::KMeans, class_count, self.seed),
        }
    }

    pub fn validate(&self) -> Result<(), SelfTrainError> {
        let bad = |m: String| Err(SelfTrainError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            ));
        }
        if !(self.pseudo_weight > 0.0 && self.pseudo_weight <= 1.0) {
            return bad(format!(
                "pseudo_weight must lie in (0, 1], got {}",
                self.pseudo_weight
            ));
        }
        let rounds = self.resolved_rounds();
        if rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.mode == Mode::Ist {
            self.schedule.validate()?;
            if rounds < self.schedule.rounds + 1 {
                return bad(format!(
                    "{} rounds cannot admit a schedule of {} batches after the first",
                    rounds, self.schedule.rounds
                ));
            }
        }
        Ok(())
    }
}

/// Unlabeled rows admitted so far, with their latest pseudo-labels.
///
/// Members are addressed by their position in the [`UnlabeledSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPool {
    ids: Vec<usize>,
    admitted_round: Vec<Option<usize>>,
    labels: Vec<Option<usize>>,
    confidence: Vec<Option<f64>>,
    size: usize,
}

impl PseudoPool {
    pub fn new(unlabeled_ids: &[usize]) -> Self {
        let n = unlabeled_ids.len();
        Self {
            ids: unlabeled_ids.to_vec(),
            admitted_round: vec![None; n],
            labels: vec![None; n],
            confidence: vec![None; n],
            size: 0,
        }
    }

    /// Adds positions not yet in the pool. Members are never removed.
    pub fn admit(&mut self, positions: impl IntoIterator<Item = usize>, round: usize) {
        for p in positions {
            if self.admitted_round[p].is_none() {
                self.admitted_round[p] = Some(round);
                self.size += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn contains(&self, position: usize) -> bool {
        self.admitted_round[position].is_some()
    }

    /// Member positions in ascending order.
    pub fn member_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&p| self.contains(p)).collect()
    }

    pub fn member_ids(&self) -> Vec<usize> {
        self.member_positions()
            .into_iter()
            .map(|p| self.ids[p])
            .collect()
    }

    pub fn admitted_round(&self, position: usize) -> Option<usize> {
        self.admitted_round[position]
    }

    pub fn pseudo_label(&self, position: usize) -> Option<usize> {
        self.labels[position]
    }

    pub fn confidence(&self, position: usize) -> Option<f64> {
        self.confidence[position]
    }
}

/// Pool members whose pseudo-labels enter training this round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoSelection {
    /// Positions in the unlabeled set, ascending.
    pub positions: Vec<usize>,
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl PseudoSelection {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Predicts the pool with `model` and keeps members with confidence at least
/// `threshold`.
///
/// Every member is re-predicted unless `freeze` is set, in which case only
/// members without a stored label are predicted.
pub fn pseudo_label_pool(
    model: &dyn Classifier,
    pool: &mut PseudoPool,
    unlabeled: &UnlabeledSet,
    threshold: f64,
    weight: f64,
    freeze: bool,
) -> Result<PseudoSelection, ClassifierError> {
    let members = pool.member_positions();
    let to_predict: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&p| !freeze || pool.labels[p].is_none())
        .collect();
    if !to_predict.is_empty() {
        let x = unlabeled.features().select(Axis(0), &to_predict);
        let proba = model.predict_proba(x.view())?;
        let labels = argmax_rows(proba.view());
        for (row, &p) in to_predict.iter().enumerate() {
            pool.labels[p] = Some(labels[row]);
            pool.confidence[p] = Some(proba[[row, labels[row]]]);
        }
    }
    let mut sel = PseudoSelection::default();
    for p in members {
        let conf = pool.confidence[p].expect("members were predicted");
        if conf >= threshold {
            sel.positions.push(p);
            sel.ids.push(pool.ids[p]);
            sel.labels
                .push(pool.labels[p].expect("members were predicted"));
            sel.weights.push(weight);
        }
    }
    Ok(sel)
}

/// Fraction of selected pseudo-labels that disagree with `truth` (indexed by
/// unlabeled position). `None` when nothing was selected.
pub fn pseudo_error_rate(selection: &PseudoSelection, truth: &[usize]) -> Option<f64> {
    if selection.is_empty() {
        return None;
    }
    let wrong = selection
        .positions
        .iter()
        .zip(&selection.labels)
        .filter(|(&p, &l)| truth[p] != l)
        .count();
    Some(wrong as f64 / selection.len() as f64)
}

/// Accuracy of argmax predictions on a labeled test set.
pub fn evaluate(model: &dyn Classifier, test: &Dataset) -> Result<f64, SelfTrainError> {
    let labels = test.labels().ok_or(SelfTrainError::EmptyTestSet)?;
    if labels.is_empty() {
        return Err(SelfTrainError::EmptyTestSet);
    }
    let pred = model
        .predict(test.features())
        .map_err(|e| SelfTrainError::InvalidConfig(format!("cannot evaluate: {e}")))?;
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub acc: f64,
    pub pool_size: usize,
    /// Pseudo-labels that passed the threshold and entered training.
    pub pseudo_used: usize,
    /// Error rate of the used pseudo-labels against the hidden labels.
    pub pseudo_err: Option<f64>,
    /// Training rows fitted this round: labeled rows plus `pseudo_used`.
    pub processed: usize,
    pub cum_seconds: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub cluster_seconds: f64,
}

impl RoundRecord {
    pub const HEADER: [&'static str; 10] = [
        "round",
        "acc",
        "pool_size",
        "pseudo_used",
        "pseudo_err",
        "processed",
        "cum_seconds",
        "fit_seconds",
        "predict_seconds",
        "cluster_seconds",
    ];

    /// Equality ignoring wall-clock fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.round == other.round
            && self.acc.to_bits() == other.acc.to_bits()
            && self.pool_size == other.pool_size
            && self.pseudo_used == other.pseudo_used
            && self.pseudo_err.map(f64::to_bits) == other.pseudo_err.map(f64::to_bits)
            && self.processed == other.processed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub round: usize,
    pub message: String,
}

/// Per-round record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrajectory {
    pub mode: Mode,
    pub cluster_method: Option<ClusterMethod>,
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub rounds: Vec<RoundRecord>,
    /// Clustering fits performed by the run.
    pub cluster_fits: usize,
    pub failure: Option<RunFailure>,
}

impl TrainingTrajectory {
    fn new(
        mode: Mode,
        method: Option<ClusterMethod>,
        seed: u64,
        n_labeled: usize,
        n_unlabeled: usize,
    ) -> Self {
        Self {
            mode,
            cluster_method: method,
            seed,
            n_labeled,
            n_unlabeled,
            rounds: Vec::new(),
            cluster_fits: 0,
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn final_acc(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.acc)
    }

    pub fn total_processed(&self) -> usize {
        self.rounds.iter().map(|r| r.processed).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_seconds)
    }

    pub fn cluster_seconds(&self) -> f64 {
        self.rounds.iter().map(|r| r.cluster_seconds).sum()
    }

    /// Seconds spent outside clustering.
    pub fn training_seconds(&self) -> f64 {
        self.total_seconds() - self.cluster_seconds()
    }

    /// Round-by-round equality ignoring wall-clock fields and the method tag.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.rounds.len() == other.rounds.len()
            && self
                .rounds
                .iter()
                .zip(&other.rounds)
                .all(|(a, b)| a.same_outcome(b))
            && self.failure == other.failure
    }

    /// One row per round.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SelfTrainError> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<(), SelfTrainError> {
        let mut w = csv::Writer::from_writer(out);
        if self.rounds.is_empty() {
            w.write_record(RoundRecord::HEADER)?;
        }
        for r in &self.rounds {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv_rounds(path: impl AsRef<Path>) -> Result<Vec<RoundRecord>, SelfTrainError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<RoundRecord>, _>>()?;
        Ok(rows)
    }

    pub fn summary(&self, config: &SelfTrainConfig) -> TrajectorySummary {
        TrajectorySummary {
            mode: self.mode,
            cluster_method: self.cluster_method,
            seed: self.seed,
            rounds: self.rounds.len(),
            final_acc: self.final_acc(),
            total_processed: self.total_processed(),
            total_seconds: self.total_seconds(),
            cluster_seconds: self.cluster_seconds(),
            cluster_fits: self.cluster_fits,
            failure: self.failure.clone(),
            config: config.clone(),
        }
    }
}

/// JSON summary of a run with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub mode: Mode,
    pub cluster_method: Option<ClusterMethod>,
    pub seed: u64,
    pub rounds: usize,
    pub final_acc: Option<f64>,
    pub total_processed: usize,
    pub total_seconds: f64,
    pub cluster_seconds: f64,
    pub cluster_fits: usize,
    pub failure: Option<RunFailure>,
    pub config: SelfTrainConfig,
}

/// A finished run.
#[derive(Debug)]
pub struct TrainingRun {
    pub model: Box<dyn Classifier>,
    pub trajectory: TrainingTrajectory,
    /// Certainty-ordered list (incremental runs only).
    pub query_list: Option<QueryList>,
    pub cluster: Option<ClusterSummary>,
}

/// Runs the loop selected by `cfg.mode`.
pub fn train(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
    backbone: &BackboneSpec,
    cfg: &SelfTrainConfig,
) -> Result<TrainingRun, SelfTrainError> {
    match cfg.mode {
        Mode::St => st_train(labeled, unlabeled, test, backbone, cfg),
        Mode::Ist => ist_train(labeled, unlabeled, test, backbone, cfg),
    }
}

/// Classical self-training: every unlabeled row is in the pool from the start.
pub fn st_train(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
    backbone: &BackboneSpec,
    cfg: &SelfTrainConfig,
) -> Result<TrainingRun, SelfTrainError> {
    let cfg = SelfTrainConfig {
        mode: Mode::St,
        ..cfg.clone()
    };
    cfg.validate()?;
    check_inputs(labeled, unlabeled, test)?;
    let mut pool = PseudoPool::new(unlabeled.ids());
    pool.admit(0..unlabeled.len(), 0);
    let trajectory =
        TrainingTrajectory::new(Mode::St, None, cfg.seed, labeled.len(), unlabeled.len());
    let state = LoopState {
        pool,
        partition: None,
        trajectory,
        clock: Instant::now(),
        cluster_seconds: 0.0,
    };
    let (model, trajectory) = run_rounds(labeled, unlabeled, test, backbone, &cfg, state)?;
    Ok(TrainingRun {
        model,
        trajectory,
        query_list: None,
        cluster: None,
    })
}

/// Incremental self-training with the clustering from `cfg`.
pub fn ist_train(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
    backbone: &BackboneSpec,
    cfg: &SelfTrainConfig,
) -> Result<TrainingRun, SelfTrainError> {
    let clusterer = cfg.resolved_clustering(labeled.class_count());
    ist_train_with(labeled, unlabeled, test, backbone, cfg, &clusterer)
}

/// Incremental self-training with a caller-supplied clustering algorithm.
///
/// The unlabeled features are standardized and clustered exactly once. The
/// standardized copy is used only for clustering; training sees the features
/// as given.
pub fn ist_train_with(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
    backbone: &BackboneSpec,
    cfg: &SelfTrainConfig,
    clusterer: &dyn Clusterer,
) -> Result<TrainingRun, SelfTrainError> {
    let cfg = SelfTrainConfig {
        mode: Mode::Ist,
        ..cfg.clone()
    };
    cfg.validate()?;
    check_inputs(labeled, unlabeled, test)?;

    let clock = Instant::now();
    let (scaled, _) = standardize(unlabeled.features());
    let model = clusterer.fit(scaled.view())?;
    let list = QueryList::build(&model, unlabeled, cfg.certainty_norm)?;
    let partition = partition_batches(&list, &cfg.schedule)?;
    let cluster_seconds = clock.elapsed().as_secs_f64();

    let position_of: std::collections::HashMap<usize, usize> = unlabeled
        .ids()
        .iter()
        .enumerate()
        .map(|(p, &id)| (id, p))
        .collect();
    let mut pool = PseudoPool::new(unlabeled.ids());
    pool.admit(partition.batches()[0].iter().map(|id| position_of[id]), 0);

    let mut trajectory = TrainingTrajectory::new(
        Mode::Ist,
        Some(clusterer.method()),
        cfg.seed,
        labeled.len(),
        unlabeled.len(),
    );
    trajectory.cluster_fits = 1;
    let state = LoopState {
        pool,
        partition: Some((partition, position_of)),
        trajectory,
        clock,
        cluster_seconds,
    };
    let (classifier, trajectory) = run_rounds(labeled, unlabeled, test, backbone, &cfg, state)?;
    Ok(TrainingRun {
        model: classifier,
        trajectory,
        query_list: Some(list),
        cluster: Some(model.summary()),
    })
}

fn check_inputs(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
) -> Result<(), SelfTrainError> {
    if unlabeled.dims() != labeled.dims() || test.dims() != labeled.dims() {
        return Err(DataError::DimensionMismatch {
            expected: labeled.dims(),
            found: if unlabeled.dims() != labeled.dims() {
                unlabeled.dims()
            } else {
                test.dims()
            },
        }
        .into());
    }
    if test.labels().is_none() || test.is_empty() {
        return Err(SelfTrainError::EmptyTestSet);
    }
    Ok(())
}

struct LoopState {
    pool: PseudoPool,
    partition: Option<(BatchPartition, std::collections::HashMap<usize, usize>)>,
    trajectory: TrainingTrajectory,
    clock: Instant,
    /// Initialization cost, charged to round 0.
    cluster_seconds: f64,
}

fn run_rounds(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    test: &Dataset,
    backbone: &BackboneSpec,
    cfg: &SelfTrainConfig,
    mut state: LoopState,
) -> Result<(Box<dyn Classifier>, TrainingTrajectory), SelfTrainError> {
    let n_l = labeled.len();
    let fail = |round: usize, source: ClassifierError, mut trajectory: TrainingTrajectory| {
        trajectory.failure = Some(RunFailure {
            round,
            message: source.to_string(),
        });
        SelfTrainError::RoundFailed {
            round,
            source,
            trajectory: Box::new(trajectory),
        }
    };

    let mut model = match backbone.build(labeled.dims(), labeled.class_count(), cfg.seed) {
        Ok(m) => m,
        Err(e) => return Err(fail(0, e, state.trajectory)),
    };
    let truth = unlabeled.evaluation_labels();

    for round in 0..cfg.resolved_rounds() {
        let mut predict_seconds = 0.0;
        let mut selection = PseudoSelection::default();
        if round > 0 {
            if let Some((partition, position_of)) = &state.partition {
                if let Some(batch) = partition.batch(round) {
                    state
                        .pool
                        .admit(batch.iter().map(|id| position_of[id]), round);
                }
            }
            let t = Instant::now();
            selection = match pseudo_label_pool(
                model.as_ref(),
                &mut state.pool,
                unlabeled,
                cfg.threshold,
                cfg.pseudo_weight,
                cfg.freeze_labels,
            ) {
                Ok(s) => s,
                Err(e) => return Err(fail(round, e, state.trajectory)),
            };
            predict_seconds += t.elapsed().as_secs_f64();
        }

        let t = Instant::now();
        let fitted = if selection.is_empty() {
            model.fit(labeled.features(), labeled.labels(), &vec![1.0; n_l])
        } else {
            let pseudo_x = unlabeled.features().select(Axis(0), &selection.positions);
            let x = concatenate(Axis(0), &[labeled.features(), pseudo_x.view()])
                .expect("column counts checked");
            let y: Vec<usize> = labeled
                .labels()
                .iter()
                .chain(&selection.labels)
                .copied()
                .collect();
            let w: Vec<f64> = std::iter::repeat_n(1.0, n_l)
                .chain(selection.weights.iter().copied())
                .collect();
            model.fit(x.view(), &y, &w)
        };
        if let Err(e) = fitted {
            return Err(fail(round, e, state.trajectory));
        }
        let fit_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let acc = evaluate(model.as_ref(), test)?;
        predict_seconds += t.elapsed().as_secs_f64();

        state.trajectory.rounds.push(RoundRecord {
            round,
            acc,
            pool_size: state.pool.len(),
            pseudo_used: selection.len(),
            pseudo_err: truth.and_then(|t| pseudo_error_rate(&selection, t)),
            processed: n_l + selection.len(),
            cum_seconds: state.clock.elapsed().as_secs_f64(),
            fit_seconds,
            predict_seconds,
            cluster_seconds: if round == 0 {
                state.cluster_seconds
            } else {
                0.0
            },
        });
    }
    Ok((model, state.trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{ModelSnapshot, RidgeConfig};
    use ndarray::{array, Array2, ArrayView2};

    /// Emits a fixed two-class probability row per sample, keyed on column 0.
    #[derive(Debug)]
    struct Fixture {
        rows: Vec<[f64; 2]>,
    }

    impl Classifier for Fixture {
        fn backbone(&self) -> crate::classifiers::Backbone {
            crate::classifiers::Backbone::NonIterative
        }
        fn class_count(&self) -> usize {
            2
        }
        fn dims(&self) -> usize {
            1
        }
        fn fit(
            &mut self,
            _: ArrayView2<'_, f64>,
            _: &[usize],
            _: &[f64],
        ) -> Result<(), ClassifierError> {
            Ok(())
        }
        fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
            Ok(Array2::from_shape_fn((x.nrows(), 2), |(i, j)| {
                self.rows[x[[i, 0]] as usize][j]
            }))
        }
        fn snapshot(&self) -> Result<ModelSnapshot, ClassifierError> {
            Err(ClassifierError::NotFitted)
        }
    }

    fn fixture_pool(confidences: &[f64]) -> (Fixture, PseudoPool, UnlabeledSet) {
        let rows = confidences.iter().map(|&c| [c, 1.0 - c]).collect();
        let n = confidences.len();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let u = UnlabeledSet::new(x, (100..100 + n).collect()).unwrap();
        let mut pool = PseudoPool::new(u.ids());
        pool.admit(0..n, 0);
        (Fixture { rows }, pool, u)
    }

    #[test]
    fn threshold_keeps_confident_members() {
        let (m, mut pool, u) = fixture_pool(&[0.99, 0.80, 0.97]);
        let sel = pseudo_label_pool(&m, &mut pool, &u, 0.95, 0.5, false).unwrap();
        assert_eq!(sel.ids, vec![100, 102]);
        assert_eq!(sel.labels, vec![0, 0]);
        assert_eq!(sel.weights, vec![0.5, 0.5]);
        // Rejected members still carry refreshed predictions.
        assert_eq!(pool.confidence(1), Some(0.80));
    }

    #[test]
    fn threshold_extremes() {
        let (m, mut pool, u) = fixture_pool(&[0.5, 1.0, 0.7]);
        assert_eq!(
            pseudo_label_pool(&m, &mut pool, &u, 0.0, 1.0, false)
                .unwrap()
                .len(),
            3
        );
        let sel = pseudo_label_pool(&m, &mut pool, &u, 1.0, 1.0, false).unwrap();
        assert_eq!(sel.positions, vec![1]);
    }

    #[test]
    fn frozen_labels_are_not_repredicted() {
        let (m, mut pool, u) = fixture_pool(&[0.99, 0.2]);
        pseudo_label_pool(&m, &mut pool, &u, 0.9, 1.0, true).unwrap();
        let flipped = Fixture {
            rows: vec![[0.1, 0.9], [0.8, 0.2]],
        };
        let sel = pseudo_label_pool(&flipped, &mut pool, &u, 0.9, 1.0, true).unwrap();
        assert_eq!(
            (sel.positions.clone(), sel.labels.clone()),
            (vec![0], vec![0])
        );
        let sel = pseudo_label_pool(&flipped, &mut pool, &u, 0.9, 1.0, false).unwrap();
        assert_eq!((sel.positions, sel.labels), (vec![0], vec![1]));
    }

    #[test]
    fn error_rate_counts_disagreements() {
        let sel = PseudoSelection {
            positions: vec![0, 1, 2, 3, 4],
            ids: vec![0, 1, 2, 3, 4],
            labels: vec![0, 1, 1, 0, 2],
            weights: vec![1.0; 5],
        };
        assert_eq!(pseudo_error_rate(&sel, &[0, 1, 0, 1, 2]), Some(0.4));
        assert_eq!(pseudo_error_rate(&sel, &[0, 1, 1, 0, 2]), Some(0.0));
        assert_eq!(pseudo_error_rate(&PseudoSelection::default(), &[]), None);
    }

    #[test]
    fn accuracy_counts_hits() {
        // Predicts class 0 when column 0 indexes a row favouring class 0.
        let m = Fixture {
            rows: (0..10)
                .map(|i| if i < 7 { [0.9, 0.1] } else { [0.1, 0.9] })
                .collect(),
        };
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let test = Dataset::new(x, Some(vec![0; 10]), 2).unwrap();
        assert_eq!(evaluate(&m, &test).unwrap(), 0.7);
        let constant = Fixture {
            rows: vec![[0.6, 0.4]; 4],
        };
        let balanced = Dataset::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            Some(vec![0, 1, 0, 1]),
            2,
        )
        .unwrap();
        assert_eq!(evaluate(&constant, &balanced).unwrap(), 0.5);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let m = Fixture { rows: vec![] };
        let unlabeled = Dataset::new(array![[0.0]], None, 0).unwrap();
        assert!(matches!(
            evaluate(&m, &unlabeled),
            Err(SelfTrainError::EmptyTestSet)
        ));
    }

    #[test]
    fn pool_only_grows() {
        let mut pool = PseudoPool::new(&[5, 6, 7]);
        pool.admit([2], 0);
        pool.admit([2, 0], 1);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.member_ids(), vec![5, 7]);
        assert_eq!(pool.admitted_round(2), Some(0));
    }

    #[test]
    fn config_validation() {
        assert!(SelfTrainConfig::default().validate().is_ok());
        let c = SelfTrainConfig {
            threshold: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SelfTrainConfig {
            pseudo_weight: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SelfTrainConfig::default().with_rounds(5);
        assert!(c.validate().is_err(), "T = 8 needs at least 9 rounds");
        assert!(SelfTrainConfig::st().with_rounds(1).validate().is_ok());
        assert_eq!(SelfTrainConfig::default().resolved_rounds(), 12);
    }

    #[test]
    fn config_json_defaults() {
        let c: SelfTrainConfig = serde_json::from_str(r#"{"mode": "st"}"#).unwrap();
        assert_eq!(c.mode, Mode::St);
        assert_eq!(c.threshold, 0.95);
        assert_eq!(c.schedule, BatchSchedule::default());
        let back: SelfTrainConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn single_round_is_supervised_only() {
        let ds = crate::dataset::make_blobs(3, 40, 2, 0.5, 1).unwrap();
        let split = crate::dataset::split_ssl(&ds, 3, 0.25, 0).unwrap();
        let spec = BackboneSpec::RandomFeatureRidge(RidgeConfig {
            hidden: 32,
            ..Default::default()
        });
        let run = st_train(
            &split.labeled,
            &split.unlabeled,
            &split.test,
            &spec,
            &SelfTrainConfig::st().with_rounds(1),
        )
        .unwrap();
        assert_eq!(run.trajectory.len(), 1);
        let r = &run.trajectory.rounds[0];
        assert_eq!((r.pseudo_used, r.processed, r.pseudo_err), (0, 9, None));
    }
}
