//! A windowed frame classifier with hand-derived backprop.
//!
//! Each frame sees itself plus `window` frames of context on both sides
//! (zero-padded at the edges), flattened into one input vector, through a
//! single tanh hidden layer to per-frame class logits. Small enough to train
//! on a CPU in seconds, expressive enough to separate the synthetic corpora.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::PosteriorMatrix;
use crate::fmath;
use crate::matrix::{FeatureMatrix, Mat};

/// Errors surfaced by the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelError {
    /// A buffer has the wrong size for the declared dimensions.
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::DimensionMismatch { what, expected, got } => {
                write!(f, "{what}: expected {expected}, got {got}")
            }
        }
    }
}

impl core::error::Error for ModelError {}

/// Model hyperparameters; all sizes are in elements, not bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Context radius: each frame sees `2 * window + 1` frames.
    pub window: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    /// Non-blank token count; logits cover `vocab + 1` classes.
    pub vocab: usize,
}

impl ModelDims {
    pub fn new(window: usize, feat_dim: usize, hidden: usize, vocab: usize) -> Self {
        assert!(feat_dim >= 1 && hidden >= 1 && vocab >= 1, "dimensions must be positive");
        Self { window, feat_dim, hidden, vocab }
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.feat_dim
    }

    pub fn classes(&self) -> usize {
        self.vocab + 1
    }

    pub fn param_count(&self) -> usize {
        let (input, hidden, classes) = (self.input_dim(), self.hidden, self.classes());
        input * hidden + hidden + hidden * classes + classes
    }

    // Flat layout: w1 (hidden x input, row-major), b1, w2 (classes x hidden,
    // row-major), b2.
    fn b1_start(&self) -> usize {
        self.input_dim() * self.hidden
    }

    fn w2_start(&self) -> usize {
        self.b1_start() + self.hidden
    }

    fn b2_start(&self) -> usize {
        self.w2_start() + self.hidden * self.classes()
    }
}

/// Flat parameter vector; also used for gradients and EMA copies, which
/// share the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    dims: ModelDims,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { dims, values: vec![0.0; dims.param_count()] }
    }

    /// Seeded uniform init: each layer samples `U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))` for weights and biases alike, in layout order.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(dims.param_count());
        let bound1 = 1.0 / fmath::sqrt(dims.input_dim() as f64);
        for _ in 0..dims.b1_start() + dims.hidden {
            values.push(rng.random_range(-bound1..bound1));
        }
        let bound2 = 1.0 / fmath::sqrt(dims.hidden as f64);
        for _ in dims.w2_start()..dims.param_count() {
            values.push(rng.random_range(-bound2..bound2));
        }
        Self { dims, values }
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != dims.param_count() {
            return Err(ModelError::DimensionMismatch {
                what: "parameter vector",
                expected: dims.param_count(),
                got: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn w1(&self) -> &[f64] {
        &self.values[..self.dims.b1_start()]
    }

    fn b1(&self) -> &[f64] {
        &self.values[self.dims.b1_start()..self.dims.w2_start()]
    }

    fn w2(&self) -> &[f64] {
        &self.values[self.dims.w2_start()..self.dims.b2_start()]
    }

    fn b2(&self) -> &[f64] {
        &self.values[self.dims.b2_start()..]
    }
}

fn check_feats(dims: ModelDims, feats: &FeatureMatrix) -> Result<(), ModelError> {
    if feats.dim() != dims.feat_dim {
        return Err(ModelError::DimensionMismatch {
            what: "feature dimension",
            expected: dims.feat_dim,
            got: feats.dim(),
        });
    }
    Ok(())
}

/// Gathers the zero-padded context window around frame `t` into `x`.
fn gather_window(dims: ModelDims, feats: &FeatureMatrix, t: usize, x: &mut [f64]) {
    let d = dims.feat_dim;
    for k in 0..2 * dims.window + 1 {
        let dst = &mut x[k * d..(k + 1) * d];
        let src = t as isize + k as isize - dims.window as isize;
        if src >= 0 && (src as usize) < feats.frames() {
            for (o, &v) in dst.iter_mut().zip(feats.frame(src as usize)) {
                *o = v as f64;
            }
        } else {
            dst.fill(0.0);
        }
    }
}

/// Hidden activations for frame `t`: `tanh(w1 x + b1)`.
fn hidden_at(params: &ParamSet, x: &[f64], h: &mut [f64]) {
    let dims = params.dims;
    let (w1, b1) = (params.w1(), params.b1());
    let input = dims.input_dim();
    for j in 0..dims.hidden {
        let row = &w1[j * input..(j + 1) * input];
        let mut acc = b1[j];
        for (w, xv) in row.iter().zip(x) {
            acc += w * xv;
        }
        h[j] = fmath::tanh(acc);
    }
}

/// Per-frame class logits for the whole utterance.
pub fn forward_logits(params: &ParamSet, feats: &FeatureMatrix) -> Result<Mat, ModelError> {
    let dims = params.dims;
    check_feats(dims, feats)?;
    let (w2, b2) = (params.w2(), params.b2());
    let mut logits = Mat::zeros(feats.frames(), dims.classes());
    let mut x = vec![0.0; dims.input_dim()];
    let mut h = vec![0.0; dims.hidden];
    for t in 0..feats.frames() {
        gather_window(dims, feats, t, &mut x);
        hidden_at(params, &x, &mut h);
        let out = logits.row_mut(t);
        for c in 0..dims.classes() {
            let row = &w2[c * dims.hidden..(c + 1) * dims.hidden];
            let mut acc = b2[c];
            for (w, hv) in row.iter().zip(&h) {
                acc += w * hv;
            }
            out[c] = acc;
        }
    }
    Ok(logits)
}

/// Normalized per-frame posteriors.
pub fn forward(params: &ParamSet, feats: &FeatureMatrix) -> Result<PosteriorMatrix, ModelError> {
    let logits = forward_logits(params, feats)?;
    // Finite params and features always yield finite logits.
    Ok(PosteriorMatrix::from_logits(logits).expect("logits from finite inputs are finite"))
}

/// Backpropagates a loss gradient w.r.t. the logits into a parameter-shaped
/// gradient. Recomputes the hidden activations instead of caching them.
pub fn backward(
    params: &ParamSet,
    feats: &FeatureMatrix,
    grad_logits: &Mat,
) -> Result<ParamSet, ModelError> {
    let dims = params.dims;
    check_feats(dims, feats)?;
    if grad_logits.rows() != feats.frames() || grad_logits.cols() != dims.classes() {
        return Err(ModelError::DimensionMismatch {
            what: "logit gradient size",
            expected: feats.frames() * dims.classes(),
            got: grad_logits.rows() * grad_logits.cols(),
        });
    }
    let (input, hidden, classes) = (dims.input_dim(), dims.hidden, dims.classes());
    let w2 = params.w2();
    let mut grad = ParamSet::zeros(dims);
    let mut x = vec![0.0; input];
    let mut h = vec![0.0; hidden];
    let mut dpre = vec![0.0; hidden];
    for t in 0..feats.frames() {
        gather_window(dims, feats, t, &mut x);
        hidden_at(params, &x, &mut h);
        let g = grad_logits.row(t);

        // dL/dpre1 = (w2^T g) * (1 - h^2), using tanh'(pre) = 1 - h^2.
        for j in 0..hidden {
            let mut acc = 0.0;
            for c in 0..classes {
                acc += w2[c * hidden + j] * g[c];
            }
            dpre[j] = acc * (1.0 - h[j] * h[j]);
        }

        let (b1s, w2s, b2s) = (dims.b1_start(), dims.w2_start(), dims.b2_start());
        let gv = grad.values_mut();
        for c in 0..classes {
            for j in 0..hidden {
                gv[w2s + c * hidden + j] += g[c] * h[j];
            }
            gv[b2s + c] += g[c];
        }
        for j in 0..hidden {
            for i in 0..input {
                gv[j * input + i] += dpre[j] * x[i];
            }
            gv[b1s + j] += dpre[j];
        }
    }
    Ok(grad)
}
