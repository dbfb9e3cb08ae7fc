//! Mini-batch k-means with per-center `1 / count` learning rates.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeanspp_init, random_init, KMeansConfig, KMeansInit};
use super::{check_finite, nearest, ClusterError, ClusterMethod, ClusterModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniBatchConfig {
    /// `max_iter` counts batches; `tol` is unused.
    #[serde(flatten)]
    pub kmeans: KMeansConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Stop after this many consecutive batches without a new best smoothed inertia.
    #[serde(default = "default_max_no_improve")]
    pub max_no_improve: usize,
}

fn default_batch_size() -> usize {
    256
}

fn default_max_no_improve() -> usize {
    10
}

impl MiniBatchConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            kmeans: KMeansConfig::new(k, seed),
            batch_size: default_batch_size(),
            max_no_improve: default_max_no_improve(),
        }
    }
}

/// Fits centers from random mini-batches.
///
/// Initial centers come from a subsample of `max(3 * batch_size, 3 * k)` rows
/// (all rows when that covers the data). Each batch point moves its nearest
/// center by `(x - c) / count`, where `count` is the number of points that
/// center has absorbed so far. A final full pass fills in the assignments.
pub fn minibatch_kmeans_fit(
    x: ArrayView2<'_, f64>,
    cfg: &MiniBatchConfig,
) -> Result<ClusterModel, ClusterError> {
    let start = Instant::now();
    let n = x.nrows();
    let k = cfg.kmeans.k;
    cfg.kmeans.validate(n)?;
    if cfg.batch_size == 0 {
        return Err(ClusterError::InvalidConfig(
            "batch_size must be at least 1".into(),
        ));
    }
    check_finite(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.kmeans.seed);

    let init_size = (3 * cfg.batch_size).max(3 * k);
    let mut centers = if init_size >= n {
        init(x, k, cfg.kmeans.init, &mut rng)
    } else {
        let picks = index::sample(&mut rng, n, init_size).into_vec();
        let sub = x.select(Axis(0), &picks);
        init(sub.view(), k, cfg.kmeans.init, &mut rng)
    };

    let full_batch = cfg.batch_size >= n;
    let all: Vec<usize> = if full_batch {
        (0..n).collect()
    } else {
        Vec::new()
    };
    let alpha = (2.0 * cfg.batch_size as f64 / (n as f64 + 1.0)).min(1.0);
    let mut counts = vec![0u64; k];
    let mut smoothed: Option<f64> = None;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.kmeans.max_iter {
        let batch = if full_batch {
            all.clone()
        } else {
            index::sample(&mut rng, n, cfg.batch_size).into_vec()
        };
        let nearest_in_batch: Vec<(usize, f64)> = batch
            .iter()
            .map(|&i| nearest(centers.view(), x.row(i)))
            .collect();
        let batch_inertia =
            nearest_in_batch.iter().map(|(_, d)| d).sum::<f64>() / batch.len() as f64;
        for (&i, &(c, _)) in batch.iter().zip(&nearest_in_batch) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            let mut center = centers.row_mut(c);
            center.zip_mut_with(&x.row(i), |cv, &xv| *cv += eta * (xv - *cv));
        }

        let ewa = match smoothed {
            None => batch_inertia,
            Some(prev) => prev * (1.0 - alpha) + batch_inertia * alpha,
        };
        smoothed = Some(ewa);
        if ewa < best {
            best = ewa;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.max_no_improve {
                break;
            }
        }
    }

    let mut model = ClusterModel::from_centroids(ClusterMethod::MiniBatchKMeans, centers, x, 0.0)?;
    model.fit_seconds = start.elapsed().as_secs_f64();
    Ok(model)
}

fn init(x: ArrayView2<'_, f64>, k: usize, how: KMeansInit, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match how {
        KMeansInit::KMeansPlusPlus => kmeanspp_init(x, k, rng),
        KMeansInit::Random => random_init(x, k, rng),
    }
}
