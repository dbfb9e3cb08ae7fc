//! Lloyd's k-means with k-means++ or random initialization.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, nearest_centroids, squared_distance, ClusterError, ClusterMethod, ClusterModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansInit {
    #[default]
    #[serde(rename = "kmeanspp")]
    KMeansPlusPlus,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Stop once the relative inertia improvement drops below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub init: KMeansInit,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_iter() -> usize {
    300
}

fn default_tol() -> f64 {
    1e-4
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: default_max_iter(),
            tol: default_tol(),
            init: KMeansInit::default(),
            seed,
        }
    }

    pub(crate) fn validate(&self, rows: usize) -> Result<(), ClusterError> {
        if self.k == 0 {
            return Err(ClusterError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(ClusterError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(ClusterError::InvalidConfig(
                "tol must be non-negative".into(),
            ));
        }
        if rows < self.k {
            return Err(ClusterError::TooFewRows {
                rows,
                required: self.k,
            });
        }
        Ok(())
    }
}

/// A k-means fit together with the inertia measured after every assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans_fit(
    x: ArrayView2<'_, f64>,
    cfg: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    kmeans_fit_traced(x, cfg).map(|f| f.model)
}

/// Runs Lloyd iterations until the relative inertia improvement falls below
/// `tol` or `max_iter` assignment steps have run.
///
/// An empty cluster is reseeded at the point currently farthest from its
/// centroid, which keeps `k` fixed and never increases inertia.
pub fn kmeans_fit_traced(
    x: ArrayView2<'_, f64>,
    cfg: &KMeansConfig,
) -> Result<KMeansFit, ClusterError> {
    let start = Instant::now();
    cfg.validate(x.nrows())?;
    check_finite(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = match cfg.init {
        KMeansInit::KMeansPlusPlus => kmeanspp_init(x, cfg.k, &mut rng),
        KMeansInit::Random => random_init(x, cfg.k, &mut rng),
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (assignments, sq) = nearest_centroids(centroids.view(), x)?;
        let inertia: f64 = sq.iter().sum();
        iterations += 1;
        let converged = match history.last() {
            Some(&prev) => prev - inertia <= cfg.tol * prev,
            None => false,
        };
        history.push(inertia);
        if converged || inertia == 0.0 || iterations >= cfg.max_iter {
            break;
        }
        centroids = update_centroids(x, &assignments, &sq, cfg.k);
    }

    let mut model = ClusterModel::from_centroids(ClusterMethod::KMeans, centroids, x, 0.0)?;
    model.fit_seconds = start.elapsed().as_secs_f64();
    Ok(KMeansFit {
        model,
        inertia_history: history,
        iterations,
    })
}

/// Means of assigned points, with empty clusters reseeded at the points with
/// the largest squared distance (distinct points, lowest index on ties).
pub(crate) fn update_centroids(
    x: ArrayView2<'_, f64>,
    assignments: &[usize],
    sq: &[f64],
    k: usize,
) -> Array2<f64> {
    let d = x.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &x.row(i);
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.sort_by(|&a, &b| sq[b].total_cmp(&sq[a]).then(a.cmp(&b)));
        for (&c, &p) in empty.iter().zip(&order) {
            sums.row_mut(c).assign(&x.row(p));
            counts[c] = 1;
        }
    }
    for (c, mut row) in sums.outer_iter_mut().enumerate() {
        row /= counts[c] as f64;
    }
    sums
}

pub(crate) fn random_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let picks = index::sample(rng, x.nrows(), k).into_vec();
    x.select(ndarray::Axis(0), &picks)
}

/// k-means++ seeding: each new center is drawn with probability proportional
/// to the squared distance to the nearest center chosen so far.
pub(crate) fn kmeanspp_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| squared_distance(x.row(i), x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if w > 0.0 && target < acc {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` past the final partial sum.
            pick.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // Every remaining point coincides with a chosen center.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(squared_distance(x.row(i), x.row(next)));
        }
    }
    x.select(ndarray::Axis(0), &chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn four_points() -> Array2<f64> {
        array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]
    }

    /// Optimal 2-partition of the fixture by exhaustive enumeration.
    fn brute_force_best_inertia(x: &Array2<f64>) -> f64 {
        let n = x.nrows();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<usize> =
                    (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
                let mean = x
                    .select(ndarray::Axis(0), &members)
                    .mean_axis(ndarray::Axis(0))
                    .unwrap();
                cost += members
                    .iter()
                    .map(|&i| squared_distance(x.row(i), mean.view()))
                    .sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn two_groups_reach_the_global_optimum() {
        let x = four_points();
        assert_eq!(brute_force_best_inertia(&x), 1.0);
        let m = kmeans_fit(x.view(), &KMeansConfig::new(2, 0)).unwrap();
        assert!((m.inertia - 1.0).abs() < 1e-12);
        let mut cents: Vec<Vec<f64>> = m.centroids.outer_iter().map(|r| r.to_vec()).collect();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let x = array![[0.0, 0.0], [1.0, 5.0], [2.0, 2.0], [7.0, 1.0], [3.0, 3.0]];
        let m = kmeans_fit(x.view(), &KMeansConfig::new(5, 3)).unwrap();
        assert_eq!(m.inertia, 0.0);
        for (i, &a) in m.assignments.iter().enumerate() {
            assert_eq!(m.centroids.row(a), x.row(i));
        }
    }

    #[test]
    fn k_one_is_the_column_mean() {
        let x = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let m = kmeans_fit(x.view(), &KMeansConfig::new(1, 0)).unwrap();
        assert!(m.assignments.iter().all(|&a| a == 0));
        assert!((m.centroids[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((m.centroids[[0, 1]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let x = array![[0.0], [1.0]];
        assert_eq!(
            kmeans_fit(x.view(), &KMeansConfig::new(3, 0)).unwrap_err(),
            ClusterError::TooFewRows {
                rows: 2,
                required: 3
            }
        );
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        // Cluster 1 owns nothing.
        let c = update_centroids(x.view(), &[0, 0, 0, 0], &[16.0, 9.0, 4.0, 36.0], 2);
        assert_eq!(c[[1, 0]], 10.0);
    }

    #[test]
    fn duplicates_do_not_break_kmeanspp() {
        let x = array![[1.0], [1.0], [1.0], [2.0]];
        let m = kmeans_fit(x.view(), &KMeansConfig::new(3, 1)).unwrap();
        assert_eq!(m.k(), 3);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Array2::from_shape_fn((60, 2), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let cfg = KMeansConfig::new(4, 9);
        let (a, b) = (
            kmeans_fit(x.view(), &cfg).unwrap(),
            kmeans_fit(x.view(), &cfg).unwrap(),
        );
        assert_eq!((a.centroids, a.assignments), (b.centroids, b.assignments));
    }

    proptest! {
        #[test]
        fn converged_fit_is_a_fixed_point(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 6..40),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let x = Array2::from_shape_fn((pts.len(), 2), |(i, j)| pts[i][j]);
            let cfg = KMeansConfig { tol: 0.0, ..KMeansConfig::new(k, seed) };
            let fit = kmeans_fit_traced(x.view(), &cfg).unwrap();
            prop_assume!(fit.iterations < cfg.max_iter);
            let m = &fit.model;
            let next = update_centroids(x.view(), &m.assignments, &m.distances.iter().map(|d| d * d).collect::<Vec<_>>(), k);
            let again = ClusterModel::from_centroids(ClusterMethod::KMeans, next, x.view(), 0.0).unwrap();
            prop_assert!((m.inertia - again.inertia).abs() <= 1e-9 * (1.0 + m.inertia));
        }
    }
}
