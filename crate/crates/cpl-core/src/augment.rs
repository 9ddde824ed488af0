//! Time and channel masking for strong and weak views.
//!
//! Masks are drawn SpecAugment-style: every position is an independent
//! Bernoulli candidate for a mask start with probability `total_prob / len`,
//! and each start zeroes a span of `len` positions (clamped at the edge).
//! A position is then covered with probability `1 - (1 - p/len)^len`.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::FeatureMatrix;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Errors surfaced by policy validation.
#[derive(Clone, Debug, PartialEq)]
pub enum AugmentError {
    /// Mask probabilities must lie in `[0, 1]`.
    ProbOutOfRange { which: &'static str, value: f64 },
}

impl core::fmt::Display for AugmentError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::ProbOutOfRange { which, value } => {
                write!(f, "{which} probability {value} is outside [0, 1]")
            }
        }
    }
}

impl core::error::Error for AugmentError {}

/// Tag distinguishing the two augmentation strengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MaskKind {
    #[default]
    Strong,
    Weak,
}

/// Masking configuration for one view.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MaskPolicy {
    /// Span length of one time mask, in frames.
    pub time_mask_len: usize,
    /// Expected number of time-mask starts per `time_mask_len` frames.
    pub time_mask_total_prob: f64,
    /// Span length of one channel mask, in channels.
    pub chan_mask_len: usize,
    /// Expected number of channel-mask starts per `chan_mask_len` channels.
    pub chan_mask_prob: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub kind: MaskKind,
}

impl MaskPolicy {
    /// Policy sized for full-scale speech features (hundreds of frames,
    /// ~80 channels). The synthetic corpora use smaller values from config.
    pub fn full_scale_strong() -> Self {
        Self {
            time_mask_len: 10,
            time_mask_total_prob: 0.65,
            chan_mask_len: 64,
            chan_mask_prob: 0.5,
            kind: MaskKind::Strong,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.time_mask_total_prob) {
            return Err(AugmentError::ProbOutOfRange {
                which: "time mask",
                value: self.time_mask_total_prob,
            });
        }
        if !(0.0..=1.0).contains(&self.chan_mask_prob) {
            return Err(AugmentError::ProbOutOfRange {
                which: "channel mask",
                value: self.chan_mask_prob,
            });
        }
        Ok(())
    }
}

/// The weak counterpart of a policy: channel masking only.
///
/// Idempotent, so weakening an already weak policy is a no-op.
pub fn weak_of(policy: &MaskPolicy) -> MaskPolicy {
    MaskPolicy { time_mask_total_prob: 0.0, kind: MaskKind::Weak, ..*policy }
}

/// Applies masking to a copy of `feats`; the input is never mutated.
///
/// All candidate starts are drawn before any zeroing, so the random stream
/// depends only on the input shape, the policy, and the seed. Zero-rate or
/// zero-length masks consume no randomness.
pub fn augment(feats: &FeatureMatrix, policy: &MaskPolicy, seed: u64) -> FeatureMatrix {
    let mut out = feats.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = out.frames();
    let dim = out.dim();

    if policy.time_mask_len > 0 && policy.time_mask_total_prob > 0.0 && frames > 0 {
        let rate = policy.time_mask_total_prob / policy.time_mask_len as f64;
        let starts: Vec<usize> =
            (0..frames).filter(|_| rng.random::<f64>() < rate).collect();
        for s in starts {
            for t in s..(s + policy.time_mask_len).min(frames) {
                out.frame_mut(t).fill(0.0);
            }
        }
    }

    if policy.chan_mask_len > 0 && policy.chan_mask_prob > 0.0 && dim > 0 {
        let rate = policy.chan_mask_prob / policy.chan_mask_len as f64;
        let starts: Vec<usize> = (0..dim).filter(|_| rng.random::<f64>() < rate).collect();
        for s in starts {
            let hi = (s + policy.chan_mask_len).min(dim);
            for t in 0..frames {
                out.frame_mut(t)[s..hi].fill(0.0);
            }
        }
    }

    out
}
