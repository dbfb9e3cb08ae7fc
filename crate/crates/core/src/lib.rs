//! Incremental self-training for semi-supervised classification.
//!
//! The crate is organised around the training loop and the pieces it needs:
//!
//! - [`dataset`]: loading (CSV, IDX), synthetic blobs, labeled/unlabeled/test
//!   splits and feature standardization.
//! - [`clustering`]: k-means, mini-batch k-means, mean shift and BIRCH behind a
//!   single [`clustering::ClusterModel`] result type.
//! - [`querylist`]: the certainty-ordered list of unlabeled samples and its
//!   partition into admission batches.
//! - [`classifiers`]: the base learner contract plus a closed-form
//!   random-feature ridge classifier and a warm-started softmax classifier.
//! - [`selftrain`]: classical self-training and incremental self-training loops
//!   with per-round trajectories.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod clustering;
pub mod dataset;
pub mod querylist;
pub mod selftrain;
pub mod stats;

pub use classifiers::{Backbone, Classifier, ClassifierError, RandomFeatureRidge, SoftmaxSgd};
pub use clustering::{ClusterError, ClusterMethod, ClusterModel, ClusterSpec, Clusterer};
pub use dataset::{DataError, Dataset, LabeledSet, SslSplit, UnlabeledSet};
pub use querylist::{BatchPartition, BatchSchedule, QueryList};
pub use selftrain::{SelfTrainConfig, SelfTrainError, TrainingRun, TrainingTrajectory};
