//! Core algorithms for curriculum pseudo-label training of CTC sequence
//! recognizers.
//!
//! This crate is `no_std` (alloc required) and holds the pure compute:
//!
//! * [`ctc`]: CTC loss with exact gradients, greedy decoding, path collapse
//! * [`score`]: pseudo-label quality scores and edit-distance metrics
//! * [`curriculum`]: stage schedule and per-stage selection quotas
//! * [`pool`]: the temporary scored pseudo-label pool
//! * [`model`]: a windowed frame classifier with hand-derived backprop
//! * [`optim`]: Adam, the tri-state learning-rate schedule, EMA tracking
//! * [`augment`]: time/channel masking for strong and weak views
//!
//! IO, file formats, corpora, and the training loop live in the companion
//! `cpl-lab` crate. All transcendental math goes through `libm` so results
//! are reproducible across platforms.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod fmath;

pub mod augment;
pub mod ctc;
pub mod curriculum;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod pool;
pub mod score;

pub use ctc::{collapse, ctc_loss_grad, greedy_decode, FramePath, PosteriorMatrix, TokenSeq, BLANK};
pub use matrix::{FeatureMatrix, Mat};
