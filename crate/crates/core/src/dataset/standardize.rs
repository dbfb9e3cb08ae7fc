use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::DataError;

/// Lower bound on every per-feature scale.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-feature mean and population standard deviation (floored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl StandardizationStats {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let d = x.ncols();
        let mut mean = Array1::zeros(d);
        let mut scale = Array1::zeros(d);
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            // Shifting by the first entry keeps constant columns exact.
            let shift = col.first().copied().unwrap_or(0.0);
            let m = shift + col.iter().map(|v| v - shift).sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            scale[j] = var.sqrt().max(SCALE_FLOOR);
        }
        Self { mean, scale }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, DataError> {
        if x.ncols() != self.dims() {
            return Err(DataError::DimensionMismatch {
                expected: self.dims(),
                found: x.ncols(),
            });
        }
        Ok((&x - &self.mean) / &self.scale)
    }
}

/// Fits statistics on `x` and returns the transformed matrix with them.
pub fn standardize(x: ArrayView2<'_, f64>) -> (Array2<f64>, StandardizationStats) {
    let stats = StandardizationStats::fit(x);
    let out = stats.apply(x).expect("dimensions match by construction");
    (out, stats)
}

pub fn apply_standardize(
    stats: &StandardizationStats,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, DataError> {
    stats.apply(x)
}
