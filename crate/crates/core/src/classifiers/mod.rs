//! Base learners for self-training.
//!
//! Both backbones implement [`Classifier`]: weighted fitting, row-stochastic
//! class probabilities and argmax prediction with lowest-index tie breaking.
//! [`RandomFeatureRidge`] re-solves a closed-form problem on every fit;
//! [`SoftmaxSgd`] trains by mini-batch gradient descent and can resume from its
//! current weights.

mod ridge;
mod softmax;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::ridge::{RandomFeatureRidge, RidgeConfig};
pub use self::softmax::{SoftmaxConfig, SoftmaxSgd};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("model has not been fitted")]
    NotFitted,
    #[error("dimension mismatch: model expects {expected} columns, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} feature rows but {other} {what}")]
    LengthMismatch {
        rows: usize,
        other: usize,
        what: &'static str,
    },
    #[error("label {label} is outside [0, {class_count})")]
    LabelOutOfRange { label: usize, class_count: usize },
    #[error("training set is empty or carries zero total weight")]
    EmptyTrainingSet,
    #[error("sample weight {0} is negative or non-finite")]
    BadWeight(f64),
    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Diverged { epoch: usize, loss: f64 },
    #[error("ridge system could not be factored; increase lambda")]
    Singular,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("snapshot does not match this backbone: {0}")]
    BadSnapshot(String),
}

/// Family of a base learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Closed-form re-solve on every fit.
    NonIterative,
    /// Gradient training, optionally warm-started.
    Iterative,
}

/// A weighted multi-class classifier.
pub trait Classifier: Send + Sync + std::fmt::Debug {
    fn backbone(&self) -> Backbone;

    fn class_count(&self) -> usize;

    fn dims(&self) -> usize;

    /// Fits on rows of `x` with labels `y` and per-row weights `w`.
    fn fit(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
    ) -> Result<(), ClassifierError>;

    /// `n x C` matrix whose rows are non-negative and sum to one.
    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError>;

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, ClassifierError> {
        Ok(argmax_rows(self.predict_proba(x)?.view()))
    }

    /// Largest class probability per row.
    fn confidence(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>, ClassifierError> {
        let p = self.predict_proba(x)?;
        Ok(p.outer_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Weights and shape metadata for checkpointing.
    fn snapshot(&self) -> Result<ModelSnapshot, ClassifierError>;
}

/// Configuration of either backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackboneSpec {
    RandomFeatureRidge(RidgeConfig),
    SoftmaxSgd(SoftmaxConfig),
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::RandomFeatureRidge(RidgeConfig::default())
    }
}

impl BackboneSpec {
    pub fn backbone(&self) -> Backbone {
        match self {
            BackboneSpec::RandomFeatureRidge(_) => Backbone::NonIterative,
            BackboneSpec::SoftmaxSgd(_) => Backbone::Iterative,
        }
    }

    /// A fresh, unfitted model for `dims` features and `class_count` classes.
    pub fn build(
        &self,
        dims: usize,
        class_count: usize,
        seed: u64,
    ) -> Result<Box<dyn Classifier>, ClassifierError> {
        Ok(match self {
            BackboneSpec::RandomFeatureRidge(c) => {
                Box::new(RandomFeatureRidge::new(c.clone(), dims, class_count, seed)?)
            }
            BackboneSpec::SoftmaxSgd(c) => {
                Box::new(SoftmaxSgd::new(c.clone(), dims, class_count, seed)?)
            }
        })
    }

    /// Rebuilds a fitted model from a snapshot.
    pub fn restore(snapshot: &ModelSnapshot) -> Result<Box<dyn Classifier>, ClassifierError> {
        Ok(match snapshot.backbone {
            Backbone::NonIterative => Box::new(RandomFeatureRidge::from_snapshot(snapshot)?),
            Backbone::Iterative => Box::new(SoftmaxSgd::from_snapshot(snapshot)?),
        })
    }
}

/// A named dense array in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_array<D: ndarray::Dimension>(name: &str, a: &ndarray::Array<f64, D>) -> Self {
        Self {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }
}

/// JSON checkpoint of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub backbone: Backbone,
    pub class_count: usize,
    pub dims: usize,
    pub config: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl ModelSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifierError> {
        serde_json::from_str(s).map_err(|e| ClassifierError::BadSnapshot(e.to_string()))
    }

    pub(crate) fn array2(&self, name: &str) -> Result<Array2<f64>, ClassifierError> {
        let a = self.find(name)?;
        match a.shape[..] {
            [r, c] if r * c == a.data.len() => {
                Ok(Array2::from_shape_vec((r, c), a.data.clone()).expect("shape checked"))
            }
            _ => Err(ClassifierError::BadSnapshot(format!(
                "array '{name}' is not a matrix"
            ))),
        }
    }

    pub(crate) fn array1(&self, name: &str) -> Result<ndarray::Array1<f64>, ClassifierError> {
        let a = self.find(name)?;
        match a.shape[..] {
            [n] if n == a.data.len() => Ok(ndarray::Array1::from(a.data.clone())),
            _ => Err(ClassifierError::BadSnapshot(format!(
                "array '{name}' is not a vector"
            ))),
        }
    }

    pub(crate) fn has(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    fn find(&self, name: &str) -> Result<&NamedArray, ClassifierError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ClassifierError::BadSnapshot(format!("missing array '{name}'")))
    }
}

/// Row-wise softmax, shifting each row by its maximum first.
pub fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.outer_iter_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    logits
}

/// Index of the largest entry per row, lowest index on ties.
pub fn argmax_rows(p: ArrayView2<'_, f64>) -> Vec<usize> {
    p.axis_iter(Axis(0))
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Shared argument checks for `fit`.
pub(crate) fn check_fit_args(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    dims: usize,
    class_count: usize,
) -> Result<(), ClassifierError> {
    if x.ncols() != dims {
        return Err(ClassifierError::DimensionMismatch {
            expected: dims,
            found: x.ncols(),
        });
    }
    if y.len() != x.nrows() {
        return Err(ClassifierError::LengthMismatch {
            rows: x.nrows(),
            other: y.len(),
            what: "labels",
        });
    }
    if w.len() != x.nrows() {
        return Err(ClassifierError::LengthMismatch {
            rows: x.nrows(),
            other: w.len(),
            what: "weights",
        });
    }
    if let Some(&label) = y.iter().find(|&&l| l >= class_count) {
        return Err(ClassifierError::LabelOutOfRange { label, class_count });
    }
    if let Some(&bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ClassifierError::BadWeight(bad));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    Ok(())
}

pub(crate) fn check_dims(x: ArrayView2<'_, f64>, dims: usize) -> Result<(), ClassifierError> {
    if x.ncols() == dims {
        Ok(())
    } else {
        Err(ClassifierError::DimensionMismatch {
            expected: dims,
            found: x.ncols(),
        })
    }
}
