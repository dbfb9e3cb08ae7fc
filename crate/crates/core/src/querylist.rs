//! Certainty-ordered query list over the unlabeled rows and its partition into
//! admission batches.
//!
//! Certainty is the negated Euclidean distance to the assigned cluster
//! centroid, so the list runs from samples sitting on a centroid to samples
//! far from every centroid. The list is built once from a fitted
//! [`ClusterModel`] and never re-ranked.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterMethod, ClusterModel};
use crate::dataset::UnlabeledSet;

#[derive(Debug, Error)]
pub enum QueryListError {
    #[error("cluster model covers {model} rows but the unlabeled set has {unlabeled}")]
    SizeMismatch { model: usize, unlabeled: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("round {round} is outside 0..={last}")]
    RoundOutOfRange { round: usize, last: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How distances become certainties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertaintyNorm {
    /// `certainty = -distance`, compared across all clusters.
    #[default]
    Global,
    /// `certainty = -rank / cluster_size`, where `rank` orders members of one
    /// cluster by distance. Interleaves clusters of different spread.
    PerClusterRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyEntry {
    pub sample_id: usize,
    pub cluster: usize,
    pub distance: f64,
    pub certainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryList {
    entries: Vec<CertaintyEntry>,
    built_from: ClusterMethod,
}

/// Descending certainty, ascending sample id on ties.
fn list_order(a: &CertaintyEntry, b: &CertaintyEntry) -> std::cmp::Ordering {
    b.certainty
        .total_cmp(&a.certainty)
        .then(a.sample_id.cmp(&b.sample_id))
}

impl QueryList {
    /// Builds the list from a model fitted on exactly the rows of `unlabeled`
    /// (in the same order).
    pub fn build(
        model: &ClusterModel,
        unlabeled: &UnlabeledSet,
        norm: CertaintyNorm,
    ) -> Result<Self, QueryListError> {
        if model.len() != unlabeled.len() {
            return Err(QueryListError::SizeMismatch {
                model: model.len(),
                unlabeled: unlabeled.len(),
            });
        }
        Ok(Self::from_parts(
            unlabeled.ids(),
            &model.assignments,
            &model.distances,
            model.method,
            norm,
        ))
    }

    pub fn from_parts(
        ids: &[usize],
        clusters: &[usize],
        distances: &[f64],
        built_from: ClusterMethod,
        norm: CertaintyNorm,
    ) -> Self {
        let mut entries: Vec<CertaintyEntry> = ids
            .iter()
            .zip(clusters)
            .zip(distances)
            .map(|((&sample_id, &cluster), &distance)| CertaintyEntry {
                sample_id,
                cluster,
                distance,
                certainty: -distance,
            })
            .collect();
        if norm == CertaintyNorm::PerClusterRank {
            let k = clusters.iter().max().map_or(0, |m| m + 1);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, e) in entries.iter().enumerate() {
                members[e.cluster].push(i);
            }
            for group in &mut members {
                group.sort_by(|&a, &b| {
                    entries[a]
                        .distance
                        .total_cmp(&entries[b].distance)
                        .then(entries[a].sample_id.cmp(&entries[b].sample_id))
                });
                let size = group.len() as f64;
                for (rank, &i) in group.iter().enumerate() {
                    entries[i].certainty = -(rank as f64) / size;
                }
            }
        }
        entries.sort_by(list_order);
        Self {
            entries,
            built_from,
        }
    }

    pub fn entries(&self) -> &[CertaintyEntry] {
        &self.entries
    }

    pub fn built_from(&self) -> ClusterMethod {
        self.built_from
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.sample_id).collect()
    }

    /// Writes `sample_id,cluster,distance` rows in list order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), QueryListError> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<(), QueryListError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "cluster", "distance"])?;
        for e in &self.entries {
            w.serialize((e.sample_id, e.cluster, e.distance))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a list written by [`write_csv`](Self::write_csv); certainty is
    /// recomputed as `-distance`.
    pub fn read_csv(
        path: impl AsRef<Path>,
        built_from: ClusterMethod,
    ) -> Result<Self, QueryListError> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for row in r.deserialize() {
            let (sample_id, cluster, distance): (usize, usize, f64) = row?;
            entries.push(CertaintyEntry {
                sample_id,
                cluster,
                distance,
                certainty: -distance,
            });
        }
        Ok(Self {
            entries,
            built_from,
        })
    }
}

pub fn build_query_list(
    model: &ClusterModel,
    unlabeled: &UnlabeledSet,
) -> Result<QueryList, QueryListError> {
    QueryList::build(model, unlabeled, CertaintyNorm::Global)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Growth {
    /// Rounds `1..=T` receive equal shares of what batch 0 leaves.
    #[default]
    Equal,
    /// Round `t` receives a share proportional to `2^(t-1)`.
    Geometric,
}

/// Sizes of the admission batches `Q(0), ..., Q(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    /// Fraction of the list admitted before the first pseudo-labeling round.
    #[serde(default = "default_initial_fraction")]
    pub initial_fraction: f64,
    /// Number of admission rounds after the initial batch.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub growth: Growth,
}

fn default_initial_fraction() -> f64 {
    0.2
}

fn default_rounds() -> usize {
    8
}

impl Default for BatchSchedule {
    fn default() -> Self {
        Self {
            initial_fraction: default_initial_fraction(),
            rounds: default_rounds(),
            growth: Growth::Equal,
        }
    }
}

impl BatchSchedule {
    /// The schedule that admits everything at once, reducing incremental
    /// self-training to the classical loop.
    pub fn all_at_once() -> Self {
        Self {
            initial_fraction: 1.0,
            rounds: 0,
            growth: Growth::Equal,
        }
    }

    pub fn validate(&self) -> Result<(), QueryListError> {
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(QueryListError::InvalidSchedule(format!(
                "initial_fraction must lie in (0, 1], got {}",
                self.initial_fraction
            )));
        }
        if self.rounds == 0 && self.initial_fraction < 1.0 {
            return Err(QueryListError::InvalidSchedule(
                "with zero rounds the initial fraction must be 1".into(),
            ));
        }
        if self.growth == Growth::Geometric && self.rounds > 52 {
            return Err(QueryListError::InvalidSchedule(
                "geometric growth supports at most 52 rounds".into(),
            ));
        }
        Ok(())
    }

    /// Batch sizes for `n` samples. Batch 0 holds `round(p0 * n)`; the rest is
    /// split per the growth rule with flooring, and the rounding remainder goes
    /// to the final batch.
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>, QueryListError> {
        self.validate()?;
        let first = ((self.initial_fraction * n as f64).round() as usize).min(n);
        let mut sizes = vec![first];
        let rest = n - first;
        if self.rounds == 0 {
            sizes[0] = n;
            return Ok(sizes);
        }
        let weights: Vec<f64> = match self.growth {
            Growth::Equal => vec![1.0; self.rounds],
            Growth::Geometric => (0..self.rounds).map(|t| 2f64.powi(t as i32)).collect(),
        };
        let total: f64 = weights.iter().sum();
        let mut assigned = 0;
        for w in &weights {
            let s = (rest as f64 * w / total).floor() as usize;
            sizes.push(s);
            assigned += s;
        }
        *sizes.last_mut().expect("rounds > 0") += rest - assigned;
        Ok(sizes)
    }
}

/// Contiguous slices of a query list, one per admission round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPartition {
    batches: Vec<Vec<usize>>,
}

impl BatchPartition {
    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    /// Index of the final admission round `T`.
    pub fn last_round(&self) -> usize {
        self.batches.len() - 1
    }

    pub fn batch(&self, t: usize) -> Option<&[usize]> {
        self.batches.get(t).map(Vec::as_slice)
    }

    /// Union of batches `0..=t`.
    pub fn pool_at(&self, t: usize) -> Result<BTreeSet<usize>, QueryListError> {
        if t > self.last_round() {
            return Err(QueryListError::RoundOutOfRange {
                round: t,
                last: self.last_round(),
            });
        }
        Ok(self.batches[..=t].iter().flatten().copied().collect())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Vec::len).collect()
    }
}

pub fn partition_batches(
    list: &QueryList,
    schedule: &BatchSchedule,
) -> Result<BatchPartition, QueryListError> {
    let sizes = schedule.sizes(list.len())?;
    let mut batches = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for s in sizes {
        batches.push(
            list.entries[offset..offset + s]
                .iter()
                .map(|e| e.sample_id)
                .collect(),
        );
        offset += s;
    }
    Ok(BatchPartition { batches })
}

pub fn pool_at(batches: &BatchPartition, t: usize) -> Result<BTreeSet<usize>, QueryListError> {
    batches.pool_at(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(ids: &[usize], distances: &[f64]) -> QueryList {
        QueryList::from_parts(
            ids,
            &vec![0; ids.len()],
            distances,
            ClusterMethod::KMeans,
            CertaintyNorm::Global,
        )
    }

    #[test]
    fn orders_by_distance() {
        let q = list(&[0, 1, 2], &[10.0, 0.0, 3.0]);
        assert_eq!(q.sample_ids(), vec![1, 2, 0]);
        assert!(q.entries().iter().all(|e| e.certainty == -e.distance));
    }

    #[test]
    fn ties_by_ascending_id() {
        let q = list(&[7, 4, 9], &[1.0, 1.0, 0.5]);
        assert_eq!(q.sample_ids(), vec![9, 4, 7]);
    }

    #[test]
    fn built_from_fitted_model() {
        use crate::clustering::{kmeans_fit, KMeansConfig};
        use ndarray::array;
        let x = array![[0.0], [3.0], [10.0]];
        let u = UnlabeledSet::new(x.clone(), vec![0, 1, 2]).unwrap();
        let mut model = kmeans_fit(x.view(), &KMeansConfig::new(1, 0)).unwrap();
        // Pin the centroid at 0 so distances are 0, 3, 10.
        model = ClusterModel::from_centroids(model.method, array![[0.0]], x.view(), 0.0).unwrap();
        let q = build_query_list(&model, &u).unwrap();
        assert_eq!(q.sample_ids(), vec![0, 1, 2]);
        assert_eq!(q.entries()[0].distance, 0.0);

        let short = UnlabeledSet::new(array![[1.0]], vec![0]).unwrap();
        assert!(matches!(
            build_query_list(&model, &short),
            Err(QueryListError::SizeMismatch {
                model: 3,
                unlabeled: 1
            })
        ));
    }

    #[test]
    fn per_cluster_rank_interleaves() {
        let q = QueryList::from_parts(
            &[0, 1, 2, 3],
            &[0, 0, 1, 1],
            &[0.1, 0.2, 5.0, 6.0],
            ClusterMethod::KMeans,
            CertaintyNorm::PerClusterRank,
        );
        assert_eq!(q.sample_ids(), vec![0, 2, 1, 3]);
    }

    fn schedule(p0: f64, rounds: usize) -> BatchSchedule {
        BatchSchedule {
            initial_fraction: p0,
            rounds,
            growth: Growth::Equal,
        }
    }

    #[test]
    fn equal_batch_sizes() {
        assert_eq!(schedule(0.2, 4).sizes(10).unwrap(), vec![2, 2, 2, 2, 2]);
        assert_eq!(schedule(0.25, 3).sizes(10).unwrap(), vec![3, 2, 2, 3]);
        assert_eq!(BatchSchedule::all_at_once().sizes(10).unwrap(), vec![10]);
    }

    #[test]
    fn geometric_batch_sizes() {
        let s = BatchSchedule {
            initial_fraction: 0.1,
            rounds: 3,
            growth: Growth::Geometric,
        };
        // 90 remaining split 1:2:4.
        assert_eq!(s.sizes(100).unwrap(), vec![10, 12, 25, 53]);
    }

    #[test]
    fn invalid_schedules() {
        assert!(schedule(0.0, 3).validate().is_err());
        assert!(schedule(1.5, 3).validate().is_err());
        assert!(schedule(0.5, 0).validate().is_err());
    }

    #[test]
    fn degenerate_schedule_pools_everything_at_once() {
        let q = list(&[3, 1, 2], &[0.3, 0.1, 0.2]);
        let p = partition_batches(&q, &BatchSchedule::all_at_once()).unwrap();
        assert_eq!(p.batches(), &[vec![1, 2, 3]]);
        assert_eq!(p.pool_at(0).unwrap().len(), 3);
        assert!(p.pool_at(1).is_err());
    }

    #[test]
    fn pools_grow_by_batch() {
        let ids: Vec<usize> = (0..10).collect();
        let d: Vec<f64> = ids.iter().map(|&i| i as f64).collect();
        let p = partition_batches(&list(&ids, &d), &schedule(0.2, 4)).unwrap();
        assert_eq!(
            pool_at(&p, 0).unwrap(),
            p.batch(0).unwrap().iter().copied().collect()
        );
        for t in 1..=4 {
            let grew = p.pool_at(t).unwrap().len() - p.pool_at(t - 1).unwrap().len();
            assert_eq!(grew, p.batch(t).unwrap().len());
        }
    }

    #[test]
    fn csv_round_trip() {
        let q = list(&[5, 6, 7], &[0.5, 0.25, 2.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        q.write_csv(&path).unwrap();
        assert_eq!(
            QueryList::read_csv(&path, ClusterMethod::KMeans).unwrap(),
            q
        );
    }
}
