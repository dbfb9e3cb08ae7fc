//! Clustering algorithms that act as the certainty oracle for incremental
//! self-training.
//!
//! Every algorithm produces a [`ClusterModel`]: centroids, the nearest-centroid
//! assignment of each fitted row and its Euclidean distance to that centroid.
//! Distances are measured in whatever feature space the caller supplies; no
//! algorithm here rescales its input.
//!
//! New algorithms plug in by implementing [`Clusterer`]. Methods without a
//! natural centroid (density-based ones, for example) should report the mean
//! of each cluster as its centroid and build the result with
//! [`ClusterModel::from_centroids`].

mod birch;
mod kmeans;
mod meanshift;
mod minibatch;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::birch::{birch_fit, BirchConfig, CfTree, ClusteringFeature};
pub use self::kmeans::{kmeans_fit, kmeans_fit_traced, KMeansConfig, KMeansFit, KMeansInit};
pub use self::meanshift::{estimate_bandwidth, meanshift_fit, merge_modes, MeanShiftConfig};
pub use self::minibatch::{minibatch_kmeans_fit, MiniBatchConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("need at least {required} rows, got {rows}")]
    TooFewRows { rows: usize, required: usize },
    #[error("dimension mismatch: model has {expected} columns, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bandwidth estimation is degenerate: {0}")]
    DegenerateBandwidth(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

/// Tag identifying the algorithm that produced a [`ClusterModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[non_exhaustive]
pub enum ClusterMethod {
    #[serde(rename = "kmeans")]
    KMeans,
    #[serde(rename = "minibatch-kmeans")]
    MiniBatchKMeans,
    #[serde(rename = "meanshift")]
    MeanShift,
    Birch,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 4] = [
        ClusterMethod::KMeans,
        ClusterMethod::MiniBatchKMeans,
        ClusterMethod::MeanShift,
        ClusterMethod::Birch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::MiniBatchKMeans => "minibatch-kmeans",
            ClusterMethod::MeanShift => "meanshift",
            ClusterMethod::Birch => "birch",
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClusterMethod {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClusterMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ClusterError::InvalidConfig(format!("unknown clustering method '{s}'")))
    }
}

/// A fitted clustering over `n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub method: ClusterMethod,
    /// `k x d` centroid matrix.
    pub centroids: Array2<f64>,
    /// Index into `centroids` for every fitted row.
    pub assignments: Vec<usize>,
    /// Euclidean distance from every fitted row to its assigned centroid.
    pub distances: Vec<f64>,
    /// Sum of squared assigned distances.
    pub inertia: f64,
    pub fit_seconds: f64,
}

impl ClusterModel {
    /// Assigns every row of `x` to its nearest centroid and fills in distances
    /// and inertia.
    pub fn from_centroids(
        method: ClusterMethod,
        centroids: Array2<f64>,
        x: ArrayView2<'_, f64>,
        fit_seconds: f64,
    ) -> Result<Self, ClusterError> {
        let (assignments, sq) = nearest_centroids(centroids.view(), x)?;
        let inertia = sq.iter().sum();
        Ok(Self {
            method,
            centroids,
            assignments,
            distances: sq.into_iter().map(f64::sqrt).collect(),
            inertia,
            fit_seconds,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dims(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Same model with every distance (and the inertia) multiplied by `factor`.
    pub fn with_scaled_distances(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.distances.iter_mut().for_each(|d| *d *= factor);
        out.inertia *= factor * factor;
        out
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            method: self.method,
            centroids: self.centroids.outer_iter().map(|r| r.to_vec()).collect(),
            inertia: self.inertia,
            fit_seconds: self.fit_seconds,
        }
    }
}

/// JSON form of a [`ClusterModel`]; assignments are recomputable and omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub method: ClusterMethod,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub fit_seconds: f64,
}

impl ClusterSummary {
    pub fn centroid_matrix(&self) -> Result<Array2<f64>, ClusterError> {
        let k = self.centroids.len();
        let d = self.centroids.first().map_or(0, Vec::len);
        if self.centroids.iter().any(|r| r.len() != d) {
            return Err(ClusterError::InvalidConfig("ragged centroid rows".into()));
        }
        Ok(Array2::from_shape_fn((k, d), |(i, j)| self.centroids[i][j]))
    }
}

/// A clustering algorithm with its configuration.
pub trait Clusterer: Send + Sync {
    fn method(&self) -> ClusterMethod;
    fn fit(&self, x: ArrayView2<'_, f64>) -> Result<ClusterModel, ClusterError>;
}

/// Any of the built-in algorithms, with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum ClusterSpec {
    #[serde(rename = "kmeans")]
    KMeans(KMeansConfig),
    #[serde(rename = "minibatch-kmeans")]
    MiniBatchKMeans(MiniBatchConfig),
    #[serde(rename = "meanshift")]
    MeanShift(MeanShiftConfig),
    #[serde(rename = "birch")]
    Birch(BirchConfig),
}

impl ClusterSpec {
    /// Default configuration of `method` with `k` clusters where applicable.
    pub fn default_for(method: ClusterMethod, k: usize, seed: u64) -> Self {
        match method {
            ClusterMethod::KMeans => ClusterSpec::KMeans(KMeansConfig::new(k, seed)),
            ClusterMethod::MiniBatchKMeans => {
                ClusterSpec::MiniBatchKMeans(MiniBatchConfig::new(k, seed))
            }
            ClusterMethod::MeanShift => ClusterSpec::MeanShift(MeanShiftConfig {
                seed,
                ..MeanShiftConfig::default()
            }),
            ClusterMethod::Birch => ClusterSpec::Birch(BirchConfig::new(k, seed)),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ClusterSpec::KMeans(c) => c.seed = seed,
            ClusterSpec::MiniBatchKMeans(c) => c.kmeans.seed = seed,
            ClusterSpec::MeanShift(c) => c.seed = seed,
            ClusterSpec::Birch(c) => c.seed = seed,
        }
        self
    }
}

impl Clusterer for ClusterSpec {
    fn method(&self) -> ClusterMethod {
        match self {
            ClusterSpec::KMeans(_) => ClusterMethod::KMeans,
            ClusterSpec::MiniBatchKMeans(_) => ClusterMethod::MiniBatchKMeans,
            ClusterSpec::MeanShift(_) => ClusterMethod::MeanShift,
            ClusterSpec::Birch(_) => ClusterMethod::Birch,
        }
    }

    fn fit(&self, x: ArrayView2<'_, f64>) -> Result<ClusterModel, ClusterError> {
        match self {
            ClusterSpec::KMeans(c) => kmeans_fit(x, c),
            ClusterSpec::MiniBatchKMeans(c) => minibatch_kmeans_fit(x, c),
            ClusterSpec::MeanShift(c) => meanshift_fit(x, c),
            ClusterSpec::Birch(c) => birch_fit(x, c),
        }
    }
}

/// Maps each row of `x` to its nearest centroid with the Euclidean distance.
/// Ties go to the lowest centroid index.
pub fn assign(
    model: &ClusterModel,
    x: ArrayView2<'_, f64>,
) -> Result<(Vec<usize>, Vec<f64>), ClusterError> {
    let (a, sq) = nearest_centroids(model.centroids.view(), x)?;
    Ok((a, sq.into_iter().map(f64::sqrt).collect()))
}

#[inline]
pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and squared distance per row.
/// Rows are processed in parallel; each result depends only on its own row.
pub(crate) fn nearest_centroids(
    centroids: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Result<(Vec<usize>, Vec<f64>), ClusterError> {
    if x.ncols() != centroids.ncols() {
        return Err(ClusterError::DimensionMismatch {
            expected: centroids.ncols(),
            found: x.ncols(),
        });
    }
    if centroids.nrows() == 0 {
        return Err(ClusterError::InvalidConfig("no centroids".into()));
    }
    let pairs: Vec<(usize, f64)> = (0..x.nrows())
        .into_par_iter()
        .map(|i| nearest(centroids, x.row(i)))
        .collect();
    Ok(pairs.into_iter().unzip())
}

#[inline]
pub(crate) fn nearest(centroids: ArrayView2<'_, f64>, point: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.outer_iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub(crate) fn check_finite(x: ArrayView2<'_, f64>) -> Result<(), ClusterError> {
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(ClusterError::NonFinite { row, col });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(centroids: Array2<f64>) -> ClusterModel {
        ClusterModel {
            method: ClusterMethod::KMeans,
            centroids,
            assignments: vec![],
            distances: vec![],
            inertia: 0.0,
            fit_seconds: 0.0,
        }
    }

    #[test]
    fn centroid_maps_to_itself() {
        let m = model(array![[0.0, 0.0], [3.0, 4.0]]);
        let (a, d) = assign(&m, array![[3.0, 4.0]].view()).unwrap();
        assert_eq!((a[0], d[0]), (1, 0.0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = model(array![[-1.0, 0.0], [5.0, 5.0], [1.0, 0.0]]);
        let (a, d) = assign(&m, array![[0.0, 0.0]].view()).unwrap();
        assert_eq!((a[0], d[0]), (0, 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = model(array![[0.0, 0.0]]);
        assert_eq!(
            assign(&m, array![[1.0]].view()).unwrap_err(),
            ClusterError::DimensionMismatch {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (a, d) = assign(&model(c.clone()), x.view()).unwrap();
        for i in 0..20 {
            let mut best = (usize::MAX, f64::INFINITY);
            for k in 0..4 {
                let mut s = 0.0;
                for j in 0..3 {
                    s += (x[[i, j]] - c[[k, j]]) * (x[[i, j]] - c[[k, j]]);
                }
                if s < best.1 {
                    best = (k, s);
                }
            }
            assert_eq!(a[i], best.0);
            assert_eq!(d[i], best.1.sqrt());
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in ClusterMethod::ALL {
            assert_eq!(m.name().parse::<ClusterMethod>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("dbscan".parse::<ClusterMethod>().is_err());
    }

    #[test]
    fn summary_json_round_trip() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let m =
            ClusterModel::from_centroids(ClusterMethod::Birch, array![[0.5, 0.5]], x.view(), 0.25)
                .unwrap();
        let json = serde_json::to_string(&m.summary()).unwrap();
        let back: ClusterSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m.summary());
        assert_eq!(back.centroid_matrix().unwrap(), m.centroids);
        assert!(json.contains("\"method\":\"birch\""));
    }
}
