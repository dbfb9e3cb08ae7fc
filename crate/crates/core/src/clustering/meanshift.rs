//! Flat-kernel mean shift with quantile-based bandwidth estimation.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, squared_distance, ClusterError, ClusterMethod, ClusterModel};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftConfig {
    /// Kernel radius; estimated from the data when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Quantile of pairwise distances used when estimating the bandwidth.
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    /// Modes closer than `merge_tol * bandwidth` collapse into one.
    #[serde(default = "default_merge_tol")]
    pub merge_tol: f64,
    /// Shift iterations per seed point.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Rows sampled for bandwidth estimation.
    #[serde(default = "default_subsample")]
    pub subsample: usize,
    /// Number of rows used as starting points; `None` shifts every row.
    #[serde(default = "default_seed_points")]
    pub seed_points: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_quantile() -> f64 {
    0.3
}
fn default_merge_tol() -> f64 {
    0.5
}
fn default_max_iter() -> usize {
    300
}
fn default_subsample() -> usize {
    1000
}
fn default_seed_points() -> Option<usize> {
    Some(1000)
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            quantile: default_quantile(),
            merge_tol: default_merge_tol(),
            max_iter: default_max_iter(),
            subsample: default_subsample(),
            seed_points: default_seed_points(),
            seed: 0,
        }
    }
}

/// The `quantile` of all pairwise Euclidean distances among (a subsample of)
/// the rows, interpolating linearly between order statistics.
pub fn estimate_bandwidth(
    x: ArrayView2<'_, f64>,
    quantile: f64,
    subsample: usize,
    seed: u64,
) -> Result<f64, ClusterError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ClusterError::DegenerateBandwidth(
            "need at least two rows".into(),
        ));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(ClusterError::InvalidConfig(format!(
            "quantile must lie in [0, 1], got {quantile}"
        )));
    }
    if x.outer_iter().all(|r| r == x.row(0)) {
        return Err(ClusterError::DegenerateBandwidth(
            "all points are identical".into(),
        ));
    }
    let rows: Vec<usize> = if n > subsample.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = index::sample(&mut rng, n, subsample.max(2)).into_vec();
        picks.sort_unstable();
        picks
    } else {
        (0..n).collect()
    };
    let mut dists: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| {
            rows[a + 1..]
                .iter()
                .map(move |&j| squared_distance(x.row(i), x.row(j)).sqrt())
        })
        .collect();
    dists.par_sort_unstable_by(f64::total_cmp);
    let bw = quantile_sorted(&dists, quantile).expect("at least one pair");
    if bw > 0.0 {
        Ok(bw)
    } else {
        Err(ClusterError::DegenerateBandwidth(format!(
            "the {quantile} quantile of pairwise distances is zero"
        )))
    }
}

/// Shifts one starting point to its mode. Returns the mode and the number of
/// points within the bandwidth of it.
fn shift_to_mode(
    x: ArrayView2<'_, f64>,
    start: Array1<f64>,
    bandwidth: f64,
    max_iter: usize,
) -> (Array1<f64>, usize) {
    let bw2 = bandwidth * bandwidth;
    let stop2 = (1e-3 * bandwidth).powi(2);
    let mut mode = start;
    let mut support = 0;
    for _ in 0..max_iter {
        let mut sum = Array1::<f64>::zeros(x.ncols());
        let mut count = 0usize;
        for row in x.outer_iter() {
            if squared_distance(row, mode.view()) <= bw2 {
                sum += &row;
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        let next = sum / count as f64;
        let moved = squared_distance(next.view(), mode.view());
        mode = next;
        support = count;
        if moved < stop2 {
            break;
        }
    }
    (mode, support)
}

/// Greedy suppression: modes are visited by descending support (ties by
/// position) and kept unless a kept mode lies within `radius`.
///
/// Kept modes are pairwise farther apart than `radius`, so merging the output
/// again keeps every mode.
pub fn merge_modes(modes: &[(Array1<f64>, usize)], radius: f64) -> Vec<(Array1<f64>, usize)> {
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[b].1.cmp(&modes[a].1).then(a.cmp(&b)));
    let r2 = radius * radius;
    let mut kept: Vec<(Array1<f64>, usize)> = Vec::new();
    for i in order {
        let (mode, support) = &modes[i];
        if kept
            .iter()
            .all(|(k, _)| squared_distance(k.view(), mode.view()) > r2)
        {
            kept.push((mode.clone(), *support));
        }
    }
    kept
}

pub fn meanshift_fit(
    x: ArrayView2<'_, f64>,
    cfg: &MeanShiftConfig,
) -> Result<ClusterModel, ClusterError> {
    let start = Instant::now();
    let n = x.nrows();
    if n == 0 {
        return Err(ClusterError::TooFewRows {
            rows: 0,
            required: 1,
        });
    }
    check_finite(x)?;
    if !(cfg.merge_tol >= 0.0) || cfg.max_iter == 0 {
        return Err(ClusterError::InvalidConfig(
            "merge_tol must be non-negative and max_iter positive".into(),
        ));
    }
    let bandwidth = match cfg.bandwidth {
        Some(bw) if bw > 0.0 && bw.is_finite() => bw,
        Some(bw) => {
            return Err(ClusterError::InvalidConfig(format!(
                "bandwidth must be positive, got {bw}"
            )))
        }
        None => estimate_bandwidth(x, cfg.quantile, cfg.subsample, cfg.seed)?,
    };

    let seeds: Vec<usize> = match cfg.seed_points {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            let mut picks = index::sample(&mut rng, n, m.max(1)).into_vec();
            picks.sort_unstable();
            picks
        }
        _ => (0..n).collect(),
    };
    let modes: Vec<(Array1<f64>, usize)> = seeds
        .par_iter()
        .map(|&i| shift_to_mode(x, x.row(i).to_owned(), bandwidth, cfg.max_iter))
        .collect();
    let kept = merge_modes(&modes, cfg.merge_tol * bandwidth);
    let centroids = ndarray::stack(
        Axis(0),
        &kept.iter().map(|(m, _)| m.view()).collect::<Vec<_>>(),
    )
    .expect("modes share dimensionality");
    let centroids: Array2<f64> = centroids;
    let mut model = ClusterModel::from_centroids(ClusterMethod::MeanShift, centroids, x, 0.0)?;
    model.fit_seconds = start.elapsed().as_secs_f64();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn two_groups() -> Array2<f64> {
        array![
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [0.1, 0.1],
            [10.0, 10.0],
            [10.1, 10.0],
            [10.0, 10.1],
            [10.1, 10.1],
            [10.05, 10.05]
        ]
    }

    #[test]
    fn recovers_two_separated_groups() {
        let x = two_groups();
        let cfg = MeanShiftConfig {
            bandwidth: Some(1.0),
            ..Default::default()
        };
        let m = meanshift_fit(x.view(), &cfg).unwrap();
        assert_eq!(m.k(), 2);
        let means = [[0.05, 0.05], [10.05, 10.05]];
        for target in means {
            let hit = m
                .centroids
                .outer_iter()
                .any(|c| (c[0] - target[0]).abs() < 1e-2 && (c[1] - target[1]).abs() < 1e-2);
            assert!(hit, "{:?} missing from {:?}", target, m.centroids);
        }
    }

    #[test]
    fn single_point_is_its_own_mode() {
        let x = array![[2.0, -1.0]];
        let cfg = MeanShiftConfig {
            bandwidth: Some(0.5),
            ..Default::default()
        };
        let m = meanshift_fit(x.view(), &cfg).unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.centroids.row(0), x.row(0));
    }

    #[test]
    fn huge_bandwidth_gives_one_cluster() {
        let x = two_groups();
        let cfg = MeanShiftConfig {
            bandwidth: Some(100.0),
            ..Default::default()
        };
        assert_eq!(meanshift_fit(x.view(), &cfg).unwrap().k(), 1);
    }

    #[test]
    fn identical_points_cannot_estimate_bandwidth() {
        let x = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            meanshift_fit(x.view(), &MeanShiftConfig::default()),
            Err(ClusterError::DegenerateBandwidth(_))
        ));
    }

    #[test]
    fn bandwidth_of_a_single_pair() {
        let x = array![[0.0], [1.0]];
        assert_eq!(estimate_bandwidth(x.view(), 0.3, 1000, 0).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_is_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 2), |_| rng.random_range(-1.0..1.0));
        let b = estimate_bandwidth(x.view(), 0.3, 1000, 0).unwrap();
        let b3 = estimate_bandwidth((&x * 3.0).view(), 0.3, 1000, 0).unwrap();
        assert!((b3 - 3.0 * b).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((100, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let mut all = Vec::new();
        for i in 0..100 {
            for j in (i + 1)..100 {
                let dx = x[[i, 0]] - x[[j, 0]];
                let dy = x[[i, 1]] - x[[j, 1]];
                all.push((dx * dx + dy * dy).sqrt());
            }
        }
        all.sort_by(f64::total_cmp);
        let pos = 0.3 * (all.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let oracle = all[lo] + (all[hi] - all[lo]) * (pos - lo as f64);
        let est = estimate_bandwidth(x.view(), 0.3, 100, 0).unwrap();
        assert!((est - oracle).abs() < 1e-9);
    }

    #[test]
    fn merging_is_idempotent_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let modes: Vec<(Array1<f64>, usize)> = (0..50)
            .map(|i| {
                (
                    Array1::from_shape_fn(2, |_| rng.random_range(0.0..5.0)),
                    i % 7,
                )
            })
            .collect();
        let once = merge_modes(&modes, 0.8);
        assert!(once.len() <= modes.len());
        let twice = merge_modes(&once, 0.8);
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_non_positive_bandwidth() {
        let x = two_groups();
        let cfg = MeanShiftConfig {
            bandwidth: Some(0.0),
            ..Default::default()
        };
        assert!(meanshift_fit(x.view(), &cfg).is_err());
    }
}
