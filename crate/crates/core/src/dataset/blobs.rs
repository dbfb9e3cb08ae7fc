use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub class_count: usize,
    pub per_class: usize,
    pub dims: usize,
    /// Standard deviation of every blob.
    pub spread: f64,
    /// Minimum pairwise centroid distance; `None` means `6 * spread`.
    #[serde(default)]
    pub min_separation: Option<f64>,
    /// Extra, wider-spread rows around each centroid that reach into the
    /// space between classes.
    #[serde(default)]
    pub noise: Option<NoiseBand>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBand {
    /// Extra rows per class.
    pub per_class: usize,
    /// Standard deviation of the extra rows.
    pub spread: f64,
}

impl BlobConfig {
    pub fn new(class_count: usize, per_class: usize, dims: usize, spread: f64, seed: u64) -> Self {
        Self {
            class_count,
            per_class,
            dims,
            spread,
            min_separation: None,
            noise: None,
            seed,
        }
    }

    pub fn separation(&self) -> f64 {
        self.min_separation.unwrap_or(6.0 * self.spread)
    }

    /// Centroids placed by rejection sampling in a box that grows until every
    /// pair is at least [`separation`](Self::separation) apart. The placement
    /// depends only on `(class_count, dims, separation, seed)`.
    pub fn centroids(&self) -> Array2<f64> {
        let sep = self.separation();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut half_width = sep
            * (self.class_count as f64)
                .powf(1.0 / self.dims as f64)
                .max(1.0);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.class_count);
        let mut failures = 0;
        while centers.len() < self.class_count {
            let candidate: Vec<f64> = (0..self.dims)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect();
            let ok = centers.iter().all(|c| {
                c.iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= sep
            });
            if ok {
                centers.push(candidate);
                failures = 0;
            } else {
                failures += 1;
                if failures % 256 == 0 {
                    half_width *= 1.25;
                }
            }
        }
        Array2::from_shape_fn((self.class_count, self.dims), |(i, j)| centers[i][j])
    }

    pub fn generate(&self) -> Result<Dataset, DataError> {
        if self.class_count < 2 {
            return Err(DataError::TooFewClasses(self.class_count));
        }
        if self.per_class == 0 || self.dims == 0 {
            return Err(DataError::InvalidArgument(
                "per_class and dims must be at least 1".into(),
            ));
        }
        let noise_spread = self.noise.as_ref().map_or(1.0, |b| b.spread);
        if !(self.spread > 0.0) || !(self.separation() > 0.0) || !(noise_spread > 0.0) {
            return Err(DataError::InvalidArgument(
                "spread and separation must be positive".into(),
            ));
        }
        let centers = self.centroids();
        // Sample noise from a stream independent of the centroid stream so the
        // centroids stay fixed when only `spread` or `per_class` changes.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let n = self.class_count * self.per_class;
        let mut features = Array2::zeros((n, self.dims));
        let mut labels = Vec::with_capacity(n);
        for class in 0..self.class_count {
            for i in 0..self.per_class {
                let row = class * self.per_class + i;
                for j in 0..self.dims {
                    let z: f64 = rng.sample(StandardNormal);
                    features[[row, j]] = centers[[class, j]] + self.spread * z;
                }
                labels.push(class);
            }
        }
        if let Some(band) = &self.noise {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(2);
            let mut extra = Array2::zeros((self.class_count * band.per_class, self.dims));
            for class in 0..self.class_count {
                for i in 0..band.per_class {
                    let row = class * band.per_class + i;
                    for j in 0..self.dims {
                        let z: f64 = rng.sample(StandardNormal);
                        extra[[row, j]] = centers[[class, j]] + band.spread * z;
                    }
                    labels.push(class);
                }
            }
            features = ndarray::concatenate(ndarray::Axis(0), &[features.view(), extra.view()])
                .expect("same column count");
        }
        Dataset::new(features, Some(labels), self.class_count)
    }
}

/// `class_count * per_class` rows without a noise band; class `c` occupies rows
/// `c * per_class .. (c + 1) * per_class`.
pub fn make_blobs(
    class_count: usize,
    per_class: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    BlobConfig::new(class_count, per_class, dims, spread, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let ds = make_blobs(2, 5, 2, 1.0, 7).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.labels().unwrap(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_blobs(3, 20, 4, 0.7, 11).unwrap();
        let b = make_blobs(3, 20, 4, 0.7, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_blobs(3, 20, 4, 0.7, 12).unwrap());
    }

    #[test]
    fn centroids_respect_separation() {
        for seed in 0..20 {
            let cfg = BlobConfig::new(10, 1, 2, 0.5, seed);
            let c = cfg.centroids();
            for i in 0..10 {
                for j in 0..i {
                    let d = (&c.row(i) - &c.row(j)).mapv(|v| v * v).sum().sqrt();
                    assert!(d >= 3.0, "seed {seed}: {d}");
                }
            }
        }
    }

    #[test]
    fn centroids_independent_of_spread_when_separation_pinned() {
        let mut a = BlobConfig::new(4, 10, 2, 0.5, 3);
        a.min_separation = Some(3.0);
        let mut b = a.clone();
        b.spread = 1.2;
        assert_eq!(a.centroids(), b.centroids());
    }

    #[test]
    fn generating_centroids_classify_nearly_perfectly() {
        // Brute-force 1-nearest-centroid classifier on the generating centroids.
        let cfg = BlobConfig::new(3, 100, 2, 0.5, 1);
        let ds = cfg.generate().unwrap();
        let c = cfg.centroids();
        let x = ds.features();
        let correct = (0..ds.len())
            .filter(|&i| {
                let mut best = (f64::INFINITY, 0);
                for k in 0..3 {
                    let d: f64 = (0..2).map(|j| (x[[i, j]] - c[[k, j]]).powi(2)).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1 == ds.labels().unwrap()[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99);
    }

    #[test]
    fn noise_band_appends_wider_rows() {
        let clean = BlobConfig::new(2, 50, 2, 0.5, 4);
        let noisy = BlobConfig {
            noise: Some(NoiseBand {
                per_class: 30,
                spread: 1.2,
            }),
            ..clean.clone()
        };
        let (a, b) = (clean.generate().unwrap(), noisy.generate().unwrap());
        assert_eq!(b.len(), 160);
        assert_eq!(b.features().slice(ndarray::s![..100, ..]), a.features());
        assert_eq!(&b.labels().unwrap()[100..130], &[0; 30]);
        let c = clean.centroids();
        let mean_dist = |rows: std::ops::Range<usize>| {
            let len = rows.len() as f64;
            rows.map(|i| {
                (&b.features().row(i) - &c.row(b.labels().unwrap()[i]))
                    .mapv(|v| v * v)
                    .sum()
                    .sqrt()
            })
            .sum::<f64>()
                / len
        };
        assert!(mean_dist(100..160) > 1.5 * mean_dist(0..100));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_blobs(1, 5, 2, 1.0, 0).is_err());
        assert!(make_blobs(2, 0, 2, 1.0, 0).is_err());
        assert!(make_blobs(2, 5, 2, 0.0, 0).is_err());
    }
}
