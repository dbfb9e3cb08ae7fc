//! Random-feature ridge classifier.
//!
//! Inputs pass through a fixed random layer `tanh(x P + b)`; only the linear
//! read-out `B` is learned, by solving the weighted ridge normal equations
//! `(H^T W H + lambda I) B = H^T W Y` against one-hot targets.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_dims, check_fit_args, softmax_rows, Backbone, Classifier, ClassifierError, ModelSnapshot,
    NamedArray,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    /// Width of the random hidden layer.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Ridge penalty.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Read-out scores are multiplied by this before the softmax.
    #[serde(default = "default_score_scale")]
    pub score_scale: f64,
}

fn default_hidden() -> usize {
    512
}

fn default_lambda() -> f64 {
    1e-2
}

fn default_score_scale() -> f64 {
    10.0
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            lambda: default_lambda(),
            score_scale: default_score_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureRidge {
    cfg: RidgeConfig,
    class_count: usize,
    /// `d x H`, entries uniform in `[-1, 1) / sqrt(d)`.
    projection: Array2<f64>,
    /// Length `H`, entries uniform in `[-1, 1)`.
    bias: Array1<f64>,
    /// `H x C` read-out, absent until the first fit.
    weights: Option<Array2<f64>>,
}

impl RandomFeatureRidge {
    pub fn new(
        cfg: RidgeConfig,
        dims: usize,
        class_count: usize,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        if cfg.hidden == 0 || dims == 0 || class_count < 2 {
            return Err(ClassifierError::InvalidConfig(
                "hidden width and dims must be positive, with at least two classes".into(),
            ));
        }
        if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!(
                "lambda must be positive, got {}",
                cfg.lambda
            )));
        }
        if !(cfg.score_scale > 0.0 && cfg.score_scale.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!(
                "score_scale must be positive, got {}",
                cfg.score_scale
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dims as f64).sqrt();
        let projection =
            Array2::from_shape_fn((dims, cfg.hidden), |_| rng.random_range(-1.0..1.0) * scale);
        let bias = Array1::from_shape_fn(cfg.hidden, |_| rng.random_range(-1.0..1.0));
        Ok(Self {
            cfg,
            class_count,
            projection,
            bias,
            weights: None,
        })
    }

    pub fn config(&self) -> &RidgeConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn weights(&self) -> Option<&Array2<f64>> {
        self.weights.as_ref()
    }

    /// `tanh(x P + b)`.
    pub fn hidden_features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        check_dims(x, self.projection.nrows())?;
        let mut h = x.dot(&self.projection);
        h += &self.bias;
        h.mapv_inplace(f64::tanh);
        Ok(h)
    }

    /// Raw read-out scores `H(x) B`.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        let b = self.weights.as_ref().ok_or(ClassifierError::NotFitted)?;
        Ok(self.hidden_features(x)?.dot(b))
    }

    pub fn from_snapshot(s: &ModelSnapshot) -> Result<Self, ClassifierError> {
        if s.backbone != Backbone::NonIterative {
            return Err(ClassifierError::BadSnapshot(
                "expected a non-iterative backbone".into(),
            ));
        }
        let cfg: RidgeConfig = serde_json::from_value(s.config.clone())
            .map_err(|e| ClassifierError::BadSnapshot(e.to_string()))?;
        let projection = s.array2("projection")?;
        let bias = s.array1("bias")?;
        let weights = s.array2("weights")?;
        if projection.dim() != (s.dims, cfg.hidden)
            || bias.len() != cfg.hidden
            || weights.dim() != (cfg.hidden, s.class_count)
        {
            return Err(ClassifierError::BadSnapshot("array shapes disagree".into()));
        }
        Ok(Self {
            cfg,
            class_count: s.class_count,
            projection,
            bias,
            weights: Some(weights),
        })
    }
}

impl Classifier for RandomFeatureRidge {
    fn backbone(&self) -> Backbone {
        Backbone::NonIterative
    }

    fn class_count(&self) -> usize {
        self.class_count
    }

    fn dims(&self) -> usize {
        self.projection.nrows()
    }

    fn fit(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
    ) -> Result<(), ClassifierError> {
        check_fit_args(x, y, w, self.dims(), self.class_count)?;
        let h = self.hidden_features(x)?;
        let width = self.cfg.hidden;

        let sqrt_w = Array1::from_iter(w.iter().map(|v| v.sqrt()));
        let hw = &h * &sqrt_w.view().insert_axis(Axis(1));
        let mut gram = hw.t().dot(&hw);
        for i in 0..width {
            gram[[i, i]] += self.cfg.lambda;
        }
        let mut wy = Array2::<f64>::zeros((x.nrows(), self.class_count));
        for (i, (&label, &weight)) in y.iter().zip(w).enumerate() {
            wy[[i, label]] = weight;
        }
        let rhs = h.t().dot(&wy);

        let gram = DMatrix::from_fn(width, width, |i, j| gram[[i, j]]);
        let rhs_m = DMatrix::from_fn(width, self.class_count, |i, j| rhs[[i, j]]);
        let chol = gram.cholesky().ok_or(ClassifierError::Singular)?;
        let sol = chol.solve(&rhs_m);
        self.weights = Some(Array2::from_shape_fn(
            (width, self.class_count),
            |(i, j)| sol[(i, j)],
        ));
        Ok(())
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        let scores = self.scores(x)?;
        Ok(softmax_rows(scores * self.cfg.score_scale))
    }

    fn snapshot(&self) -> Result<ModelSnapshot, ClassifierError> {
        let weights = self.weights.as_ref().ok_or(ClassifierError::NotFitted)?;
        Ok(ModelSnapshot {
            backbone: Backbone::NonIterative,
            class_count: self.class_count,
            dims: self.dims(),
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
            arrays: vec![
                NamedArray::from_array("projection", &self.projection),
                NamedArray::from_array("bias", &self.bias),
                NamedArray::from_array("weights", weights),
            ],
        })
    }
}
