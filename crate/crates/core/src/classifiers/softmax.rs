//! Softmax classifier trained by mini-batch gradient descent.
//!
//! Linear by default; `hidden: Some(h)` inserts one `tanh` layer of width `h`.
//! The loss on a batch is the weighted mean cross-entropy
//! `sum_i w_i * CE_i / sum_i w_i`, plus `l2 / 2 * |W|^2` on weight matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_dims, check_fit_args, softmax_rows, Backbone, Classifier, ClassifierError, ModelSnapshot,
    NamedArray,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Passes over the training set per `fit` call.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Resume from the current weights on each `fit` instead of reinitializing.
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
    /// Width of an optional `tanh` hidden layer.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub l2: f64,
}

fn default_learning_rate() -> f64 {
    0.03
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    20
}
fn default_warm_start() -> bool {
    true
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            warm_start: default_warm_start(),
            hidden: None,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    /// Hidden layer `(d x h, h)`.
    layer: Option<(Array2<f64>, Array1<f64>)>,
    /// Output weights, `in x C` where `in` is `d` or `h`.
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Params {
    fn init(cfg: &SoftmaxConfig, dims: usize, class_count: usize, seed: u64) -> Self {
        let layer = cfg.hidden.map(|h| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let scale = 1.0 / (dims as f64).sqrt();
            (
                Array2::from_shape_fn((dims, h), |_| rng.random_range(-1.0..1.0) * scale),
                Array1::zeros(h),
            )
        });
        let width = cfg.hidden.unwrap_or(dims);
        Self {
            layer,
            w: Array2::zeros((width, class_count)),
            b: Array1::zeros(class_count),
        }
    }

    fn arrays(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some((w1, b1)) = &self.layer {
            out.push(w1.as_slice().expect("standard layout"));
            out.push(b1.as_slice().expect("standard layout"));
        }
        out.push(self.w.as_slice().expect("standard layout"));
        out.push(self.b.as_slice().expect("standard layout"));
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some((w1, b1)) = &mut self.layer {
            out.push(w1.as_slice_mut().expect("standard layout"));
            out.push(b1.as_slice_mut().expect("standard layout"));
        }
        out.push(self.w.as_slice_mut().expect("standard layout"));
        out.push(self.b.as_slice_mut().expect("standard layout"));
        out
    }

    fn flat(&self) -> Vec<f64> {
        self.arrays().concat()
    }

    fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxSgd {
    cfg: SoftmaxConfig,
    dims: usize,
    class_count: usize,
    seed: u64,
    params: Params,
    rng: ChaCha8Rng,
    fitted: bool,
}

impl PartialEq for SoftmaxSgd {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg
            && self.dims == other.dims
            && self.class_count == other.class_count
            && self.params == other.params
            && self.fitted == other.fitted
    }
}

impl SoftmaxSgd {
    pub fn new(
        cfg: SoftmaxConfig,
        dims: usize,
        class_count: usize,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        if dims == 0 || class_count < 2 {
            return Err(ClassifierError::InvalidConfig(
                "dims must be positive, with at least two classes".into(),
            ));
        }
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                cfg.learning_rate
            )));
        }
        if cfg.batch_size == 0 || cfg.hidden == Some(0) {
            return Err(ClassifierError::InvalidConfig(
                "batch_size and hidden width must be positive".into(),
            ));
        }
        if !(cfg.l2 >= 0.0) {
            return Err(ClassifierError::InvalidConfig(
                "l2 must be non-negative".into(),
            ));
        }
        let params = Params::init(&cfg, dims, class_count, seed);
        Ok(Self {
            cfg,
            dims,
            class_count,
            seed,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fitted: false,
        })
    }

    pub fn config(&self) -> &SoftmaxConfig {
        &self.cfg
    }

    /// All parameters flattened: hidden weights and bias (if any), then
    /// output weights and bias, each row-major.
    pub fn params(&self) -> Vec<f64> {
        self.params.flat()
    }

    /// Overwrites every parameter; the model counts as fitted afterwards.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), ClassifierError> {
        if flat.len() != self.params.len() {
            return Err(ClassifierError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for a in self.params.arrays_mut() {
            a.copy_from_slice(&flat[offset..offset + a.len()]);
            offset += a.len();
        }
        self.fitted = true;
        Ok(())
    }

    /// Weighted mean cross-entropy (plus penalty) over the given rows.
    pub fn loss(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
    ) -> Result<f64, ClassifierError> {
        check_fit_args(x, y, w, self.dims, self.class_count)?;
        Ok(self.loss_and_gradient(x, y, w, false).0)
    }

    /// Gradient of [`loss`](Self::loss), flattened like [`params`](Self::params).
    pub fn gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
    ) -> Result<Vec<f64>, ClassifierError> {
        check_fit_args(x, y, w, self.dims, self.class_count)?;
        Ok(self
            .loss_and_gradient(x, y, w, true)
            .1
            .expect("requested")
            .flat())
    }

    /// Trains for `epochs` passes from the current weights, regardless of the
    /// warm-start setting.
    pub fn fit_epochs(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
        epochs: usize,
    ) -> Result<(), ClassifierError> {
        check_fit_args(x, y, w, self.dims, self.class_count)?;
        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                let wb: Vec<f64> = chunk.iter().map(|&i| w[i]).collect();
                if wb.iter().sum::<f64>() <= 0.0 {
                    continue;
                }
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                let (loss, grad) = self.loss_and_gradient(xb.view(), &yb, &wb, true);
                if !loss.is_finite() {
                    return Err(ClassifierError::Diverged { epoch, loss });
                }
                let grad = grad.expect("requested");
                let lr = self.cfg.learning_rate;
                for (p, g) in self.params.arrays_mut().into_iter().zip(grad.arrays()) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            if !self.params.is_finite() {
                return Err(ClassifierError::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        self.fitted = true;
        Ok(())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        match &self.params.layer {
            Some((w1, b1)) => {
                let mut a = x.dot(w1);
                a += b1;
                a.mapv_inplace(f64::tanh);
                let mut logits = a.dot(&self.params.w);
                logits += &self.params.b;
                (Some(a), logits)
            }
            None => {
                let mut logits = x.dot(&self.params.w);
                logits += &self.params.b;
                (None, logits)
            }
        }
    }

    fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
        want_grad: bool,
    ) -> (f64, Option<Params>) {
        let (hidden, logits) = self.forward(x);
        let total_w: f64 = w.iter().sum();
        let mut loss = 0.0;
        for (i, row) in logits.outer_iter().enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += w[i] * (lse - row[y[i]]);
        }
        loss /= total_w;
        if self.cfg.l2 > 0.0 {
            let mut sq = self.params.w.mapv(|v| v * v).sum();
            if let Some((w1, _)) = &self.params.layer {
                sq += w1.mapv(|v| v * v).sum();
            }
            loss += 0.5 * self.cfg.l2 * sq;
        }
        if !want_grad {
            return (loss, None);
        }

        // d loss / d logits = w_i / W * (p_i - onehot_i).
        let mut g = softmax_rows(logits);
        for (i, mut row) in g.outer_iter_mut().enumerate() {
            row[y[i]] -= 1.0;
            row *= w[i] / total_w;
        }
        let input = hidden.as_ref().map_or(x, |a| a.view());
        let mut dw = input.t().dot(&g);
        let db = g.sum_axis(Axis(0));
        if self.cfg.l2 > 0.0 {
            dw.scaled_add(self.cfg.l2, &self.params.w);
        }
        let layer = match (&self.params.layer, &hidden) {
            (Some((w1, _)), Some(a)) => {
                let mut dz = g.dot(&self.params.w.t());
                Zip::from(&mut dz)
                    .and(a)
                    .for_each(|d, &av| *d *= 1.0 - av * av);
                let mut dw1 = x.t().dot(&dz);
                if self.cfg.l2 > 0.0 {
                    dw1.scaled_add(self.cfg.l2, w1);
                }
                Some((dw1, dz.sum_axis(Axis(0))))
            }
            _ => None,
        };
        (
            loss,
            Some(Params {
                layer,
                w: dw,
                b: db,
            }),
        )
    }

    pub fn from_snapshot(s: &ModelSnapshot) -> Result<Self, ClassifierError> {
        if s.backbone != Backbone::Iterative {
            return Err(ClassifierError::BadSnapshot(
                "expected an iterative backbone".into(),
            ));
        }
        let cfg: SoftmaxConfig = serde_json::from_value(s.config.clone())
            .map_err(|e| ClassifierError::BadSnapshot(e.to_string()))?;
        let mut model = Self::new(cfg, s.dims, s.class_count, 0)?;
        let layer = if s.has("hidden_weights") {
            Some((s.array2("hidden_weights")?, s.array1("hidden_bias")?))
        } else {
            None
        };
        let params = Params {
            layer,
            w: s.array2("weights")?,
            b: s.array1("bias")?,
        };
        let expected = &model.params;
        let same_shape = params.w.dim() == expected.w.dim()
            && params.b.len() == expected.b.len()
            && match (&params.layer, &expected.layer) {
                (Some((a, b)), Some((c, d))) => a.dim() == c.dim() && b.len() == d.len(),
                (None, None) => true,
                _ => false,
            };
        if !same_shape {
            return Err(ClassifierError::BadSnapshot("array shapes disagree".into()));
        }
        model.params = params;
        model.fitted = true;
        Ok(model)
    }
}

impl Classifier for SoftmaxSgd {
    fn backbone(&self) -> Backbone {
        Backbone::Iterative
    }

    fn class_count(&self) -> usize {
        self.class_count
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn fit(
        &mut self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        w: &[f64],
    ) -> Result<(), ClassifierError> {
        if !self.cfg.warm_start {
            self.params = Params::init(&self.cfg, self.dims, self.class_count, self.seed);
            self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        }
        self.fit_epochs(x, y, w, self.cfg.epochs)
    }

    fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        check_dims(x, self.dims)?;
        Ok(softmax_rows(self.forward(x).1))
    }

    fn snapshot(&self) -> Result<ModelSnapshot, ClassifierError> {
        if !self.fitted {
            return Err(ClassifierError::NotFitted);
        }
        let mut arrays = Vec::new();
        if let Some((w1, b1)) = &self.params.layer {
            arrays.push(NamedArray::from_array("hidden_weights", w1));
            arrays.push(NamedArray::from_array("hidden_bias", b1));
        }
        arrays.push(NamedArray::from_array("weights", &self.params.w));
        arrays.push(NamedArray::from_array("bias", &self.params.b));
        Ok(ModelSnapshot {
            backbone: Backbone::Iterative,
            class_count: self.class_count,
            dims: self.dims,
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
            arrays,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn random_problem(
        seed: u64,
        n: usize,
        d: usize,
        c: usize,
    ) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|_| rng.random_range(0..c)).collect();
        let w = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        (x, y, w)
    }

    fn finite_difference_error(
        model: &mut SoftmaxSgd,
        x: &Array2<f64>,
        y: &[usize],
        w: &[f64],
    ) -> f64 {
        let analytic = model.gradient(x.view(), y, w).unwrap();
        let base = model.params();
        let h = 1e-6;
        let mut numeric = vec![0.0; base.len()];
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            model.set_params(&p).unwrap();
            let up = model.loss(x.view(), y, w).unwrap();
            p[k] = base[k] - h;
            model.set_params(&p).unwrap();
            let down = model.loss(x.view(), y, w).unwrap();
            numeric[k] = (up - down) / (2.0 * h);
        }
        model.set_params(&base).unwrap();
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        diff / scale
    }

    fn randomize(model: &mut SoftmaxSgd, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..model.params().len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5)
            .collect();
        model.set_params(&p).unwrap();
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let (x, y, w) = random_problem(1, 6, 4, 3);
        let mut m = SoftmaxSgd::new(
            SoftmaxConfig {
                l2: 0.1,
                ..Default::default()
            },
            4,
            3,
            0,
        )
        .unwrap();
        randomize(&mut m, 2);
        assert!(finite_difference_error(&mut m, &x, &y, &w) <= 1e-4);
    }

    #[test]
    fn hidden_layer_gradient_matches_finite_differences() {
        let (x, y, w) = random_problem(3, 6, 4, 3);
        let cfg = SoftmaxConfig {
            hidden: Some(5),
            ..Default::default()
        };
        let mut m = SoftmaxSgd::new(cfg, 4, 3, 0).unwrap();
        randomize(&mut m, 4);
        assert!(finite_difference_error(&mut m, &x, &y, &w) <= 1e-4);
    }

    #[test]
    fn zero_weights_predict_uniform_and_class_zero() {
        let mut m = SoftmaxSgd::new(
            SoftmaxConfig {
                epochs: 0,
                ..Default::default()
            },
            2,
            2,
            0,
        )
        .unwrap();
        let x = array![[1.0, 2.0], [-3.0, 0.5]];
        m.fit(x.view(), &[0, 1], &[1.0, 1.0]).unwrap();
        let p = m.predict_proba(x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        assert_eq!(m.predict(x.view()).unwrap(), vec![0, 0]);
        assert_eq!(m.confidence(x.view()).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let (x, y, w) = random_problem(5, 30, 3, 3);
        let mut m = SoftmaxSgd::new(SoftmaxConfig::default(), 3, 3, 1).unwrap();
        m.fit(x.view(), &y, &w).unwrap();
        let before = m.params();
        m.fit_epochs(x.view(), &y, &w, 0).unwrap();
        assert_eq!(m.params(), before);
    }

    #[test]
    fn warm_start_passes_state_through() {
        let (x, y, w) = random_problem(6, 100, 3, 3);
        let mut a = SoftmaxSgd::new(SoftmaxConfig::default(), 3, 3, 9).unwrap();
        a.fit_epochs(x.view(), &y, &w, 0).unwrap();
        a.fit_epochs(x.view(), &y, &w, 20).unwrap();
        let mut b = SoftmaxSgd::new(SoftmaxConfig::default(), 3, 3, 9).unwrap();
        b.fit(x.view(), &y, &w).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn cold_start_resets_each_fit() {
        let (x, y, w) = random_problem(7, 50, 2, 2);
        let cfg = SoftmaxConfig {
            warm_start: false,
            ..Default::default()
        };
        let mut m = SoftmaxSgd::new(cfg, 2, 2, 3).unwrap();
        m.fit(x.view(), &y, &w).unwrap();
        let once = m.params();
        m.fit(x.view(), &y, &w).unwrap();
        assert_eq!(m.params(), once);
    }

    #[test]
    fn half_weight_duplicates_match_original() {
        let (x, y, w) = random_problem(8, 20, 3, 3);
        let cfg = SoftmaxConfig {
            batch_size: 1000,
            ..Default::default()
        };
        let mut single = SoftmaxSgd::new(cfg.clone(), 3, 3, 2).unwrap();
        single.fit(x.view(), &y, &w).unwrap();

        let xx = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let yy: Vec<usize> = y.iter().chain(&y).copied().collect();
        let ww: Vec<f64> = w.iter().chain(&w).map(|v| v / 2.0).collect();
        let mut doubled = SoftmaxSgd::new(cfg, 3, 3, 2).unwrap();
        doubled.fit(xx.view(), &yy, &ww).unwrap();
        for (a, b) in single.params().iter().zip(doubled.params()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn learns_separable_data() {
        let x = array![
            [-2.0, 0.0],
            [-1.5, 0.3],
            [-1.0, -0.2],
            [1.0, 0.1],
            [1.5, -0.3],
            [2.0, 0.0]
        ];
        let y = [0, 0, 0, 1, 1, 1];
        let mut m = SoftmaxSgd::new(
            SoftmaxConfig {
                epochs: 200,
                ..Default::default()
            },
            2,
            2,
            0,
        )
        .unwrap();
        m.fit(x.view(), &y, &[1.0; 6]).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn divergence_is_reported() {
        let x = array![[1e300, -1e300], [-1e300, 1e300]];
        let cfg = SoftmaxConfig {
            learning_rate: 1e10,
            ..Default::default()
        };
        let mut m = SoftmaxSgd::new(cfg, 2, 2, 0).unwrap();
        let err = m.fit(x.view(), &[0, 1], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, ClassifierError::Diverged { .. }));
        assert!(err.to_string().contains("smaller learning rate"));
    }

    #[test]
    fn unfitted_model_refuses_to_predict() {
        let m = SoftmaxSgd::new(SoftmaxConfig::default(), 2, 2, 0).unwrap();
        assert!(matches!(
            m.predict_proba(array![[0.0, 0.0]].view()),
            Err(ClassifierError::NotFitted)
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let (x, y, w) = random_problem(10, 30, 3, 4);
        let cfg = SoftmaxConfig {
            hidden: Some(6),
            ..Default::default()
        };
        let mut m = SoftmaxSgd::new(cfg, 3, 4, 1).unwrap();
        m.fit(x.view(), &y, &w).unwrap();
        let json = m.snapshot().unwrap().to_json();
        let back = SoftmaxSgd::from_snapshot(&ModelSnapshot::from_json(&json).unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(
            back.predict_proba(x.view()).unwrap(),
            m.predict_proba(x.view()).unwrap()
        );
    }
}
