//! Datasets and the labeled / unlabeled / test views used by self-training.
//!
//! A [`Dataset`] owns a feature matrix, optional labels and stable row ids.
//! [`split_ssl`] carves it into a [`LabeledSet`], an [`UnlabeledSet`] and a
//! held-out test [`Dataset`]; ids survive every view so pseudo-labels can be
//! traced back to source rows.
//!
//! The unlabeled view keeps the true labels of its rows for diagnostics only.
//! They are reachable solely through [`UnlabeledSet::evaluation_labels`] and
//! nothing in the training path calls it.

mod blobs;
mod csv;
mod idx;
mod split;
mod standardize;

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

pub use self::blobs::{make_blobs, BlobConfig, NoiseBand};
pub use self::csv::load_csv;
pub use self::idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use self::split::{split_ssl, SslSplit};
pub use self::standardize::{apply_standardize, standardize, StandardizationStats, SCALE_FLOOR};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] ::csv::Error),
    #[error("row {row} column '{column}': cannot parse {value:?} as {expected}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("row {row} column '{column}': non-finite value {value:?}")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("label column '{0}' not found in header")]
    MissingColumn(String),
    #[error("bad IDX magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row count mismatch: expected {expected}, found {found}")]
    RowMismatch { expected: usize, found: usize },
    #[error("label {label} at row {row} is outside [0, {class_count})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        class_count: usize,
    },
    #[error("at least two classes are required, found {0}")]
    TooFewClasses(usize),
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("duplicate row id {0}")]
    DuplicateId(usize),
    #[error("class {class} has {available} rows, {requested} requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Feature matrix with optional labels and stable row ids.
///
/// `class_count` is `0` when the dataset carries no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
    ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset with ids `0..n`.
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        let ids = (0..features.nrows()).collect();
        Self::with_ids(features, labels, class_count, ids)
    }

    pub fn with_ids(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        class_count: usize,
        ids: Vec<usize>,
    ) -> Result<Self, DataError> {
        if features.ncols() == 0 {
            return Err(DataError::InvalidArgument(
                "features need at least one column".into(),
            ));
        }
        if ids.len() != features.nrows() {
            return Err(DataError::RowMismatch {
                expected: features.nrows(),
                found: ids.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(DataError::DuplicateId(id));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(DataError::RowMismatch {
                    expected: features.nrows(),
                    found: labels.len(),
                });
            }
            if class_count < 2 {
                return Err(DataError::TooFewClasses(class_count));
            }
            if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count)
            {
                return Err(DataError::LabelOutOfRange {
                    row,
                    label,
                    class_count,
                });
            }
        }
        let class_count = if labels.is_some() { class_count } else { 0 };
        Ok(Self {
            features,
            labels,
            class_count,
            ids,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at the given positions, keeping their ids.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), positions),
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
            class_count: self.class_count,
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        }
    }

    /// Same rows and labels with a replacement feature matrix.
    pub fn with_features(self, features: Array2<f64>) -> Result<Self, DataError> {
        if features.nrows() != self.len() {
            return Err(DataError::RowMismatch {
                expected: self.len(),
                found: features.nrows(),
            });
        }
        Self::with_ids(features, self.labels, self.class_count, self.ids)
    }
}

/// Rows whose labels are visible to training (the `n_l` labeled samples).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Array2<f64>,
    labels: Vec<usize>,
    ids: Vec<usize>,
    class_count: usize,
}

impl LabeledSet {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        ids: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if features.nrows() == 0 {
            return Err(DataError::InvalidArgument(
                "labeled set must not be empty".into(),
            ));
        }
        // Reuse the dataset checks for ids and label range.
        let ds = Dataset::with_ids(features, Some(labels), class_count, ids)?;
        Ok(Self {
            labels: ds.labels.expect("labels present"),
            features: ds.features,
            ids: ds.ids,
            class_count,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    pub fn with_features(self, features: Array2<f64>) -> Result<Self, DataError> {
        if features.nrows() != self.len() {
            return Err(DataError::RowMismatch {
                expected: self.len(),
                found: features.nrows(),
            });
        }
        Self::new(features, self.labels, self.ids, self.class_count)
    }
}

/// Rows whose labels are hidden from training (the `n_u` unlabeled samples).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    features: Array2<f64>,
    ids: Vec<usize>,
    ground_truth: Option<Vec<usize>>,
}

impl UnlabeledSet {
    pub fn new(features: Array2<f64>, ids: Vec<usize>) -> Result<Self, DataError> {
        if features.nrows() == 0 {
            return Err(DataError::InvalidArgument(
                "unlabeled set must not be empty".into(),
            ));
        }
        let ds = Dataset::with_ids(features, None, 0, ids)?;
        Ok(Self {
            features: ds.features,
            ids: ds.ids,
            ground_truth: None,
        })
    }

    /// Attaches hidden true labels for pseudo-label diagnostics.
    pub fn with_ground_truth(mut self, labels: Vec<usize>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::RowMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        self.ground_truth = Some(labels);
        Ok(self)
    }

    /// Drops the diagnostic labels entirely.
    pub fn without_ground_truth(mut self) -> Self {
        self.ground_truth = None;
        self
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    /// True labels, for evaluating pseudo-label quality only.
    pub fn evaluation_labels(&self) -> Option<&[usize]> {
        self.ground_truth.as_deref()
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self, DataError> {
        if features.nrows() != self.len() {
            return Err(DataError::RowMismatch {
                expected: self.len(),
                found: features.nrows(),
            });
        }
        self.features = features;
        Ok(self)
    }
}
