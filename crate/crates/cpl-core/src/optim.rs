//! Adam, the trapezoidal learning-rate schedule, and EMA teacher tracking.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::model::ParamSet;

/// Errors surfaced by the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimError {
    /// A gradient entry was NaN or infinite.
    NonFiniteGradient,
    /// Parameter, gradient, and state vectors must share one length.
    ShapeMismatch { expected: usize, got: usize },
    /// EMA decay must lie in `[0, 1]`.
    AlphaOutOfRange { alpha: f64 },
}

impl core::fmt::Display for OptimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonFiniteGradient => write!(f, "gradient contains NaN or infinite values"),
            Self::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected} values, got {got}")
            }
            Self::AlphaOutOfRange { alpha } => {
                write!(f, "EMA decay {alpha} is outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for OptimError {}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1, beta2, eps }
    }

    /// The conventional defaults: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn with_defaults(len: usize) -> Self {
        Self::new(len, 0.9, 0.999, 1e-8)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Completed update count.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restores a previously saved state (moments plus step counter).
    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<(), OptimError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(OptimError::ShapeMismatch { expected: self.m.len(), got: m.len() });
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    grad: &ParamSet,
    lr: f64,
) -> Result<(), OptimError> {
    let n = params.values().len();
    if grad.values().len() != n || state.len() != n {
        return Err(OptimError::ShapeMismatch { expected: n, got: grad.values().len() });
    }
    if !grad.is_finite() {
        return Err(OptimError::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - fmath::pow(state.beta1, t as f64);
    let bc2 = 1.0 - fmath::pow(state.beta2, t as f64);
    let theta = params.values_mut().iter_mut();
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((p, &g), (m, v)) in theta.zip(grad.values()).zip(moments) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (fmath::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Trapezoidal learning rate: linear warmup, a constant plateau, then a
/// linear decay to a small floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub total_iters: usize,
    /// Warmup occupies the first `warmup_frac` of the run.
    pub warmup_frac: f64,
    /// Decay begins after `decay_start_frac` of the run.
    pub decay_start_frac: f64,
    /// Final rate as a fraction of the peak.
    pub floor_frac: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, total_iters: usize) -> Self {
        assert!(peak_lr >= 0.0 && total_iters >= 1);
        Self { peak_lr, total_iters, warmup_frac: 0.10, decay_start_frac: 0.50, floor_frac: 0.05 }
    }

    /// Rate at global step `iter`; clamps to the floor past the end.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let total = self.total_iters as f64;
        let t = iter as f64;
        let warmup_end = self.warmup_frac * total;
        let decay_start = self.decay_start_frac * total;
        if t >= total {
            return self.floor_frac * self.peak_lr;
        }
        if t < warmup_end {
            self.peak_lr * t / warmup_end
        } else if t < decay_start {
            self.peak_lr
        } else {
            let frac = (t - decay_start) / (total - decay_start);
            self.peak_lr * (1.0 + (self.floor_frac - 1.0) * frac)
        }
    }
}

/// In-place EMA tracking: `ema = alpha * ema + (1 - alpha) * student`.
pub fn ema_update(
    ema: &mut ParamSet,
    student: &ParamSet,
    alpha: f64,
) -> Result<(), OptimError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OptimError::AlphaOutOfRange { alpha });
    }
    let n = ema.values().len();
    if student.values().len() != n {
        return Err(OptimError::ShapeMismatch { expected: n, got: student.values().len() });
    }
    let e = ema.values_mut();
    for (ev, &sv) in e.iter_mut().zip(student.values()) {
        *ev = alpha * *ev + (1.0 - alpha) * sv;
    }
    Ok(())
}

/// EMA decay such that the initial teacher retains weight `retention` of
/// its starting value after `total_iters` updates: `retention^(1/total)`.
pub fn ema_alpha_from_retention(total_iters: usize, retention: f64) -> f64 {
    assert!(total_iters >= 1, "need at least one iteration");
    assert!(retention > 0.0 && retention <= 1.0, "retention must be in (0, 1]");
    fmath::pow(retention, 1.0 / total_iters as f64)
}
