//! Stage schedule for curriculum selection.
//!
//! Training time is split into stages whose durations grow linearly
//! (stage k gets a share proportional to k), so early stages are short and
//! conservative while later stages run long with most of the pool admitted.

use alloc::vec::Vec;

use crate::fmath;

/// Errors surfaced by the schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleError {
    /// Need `1 <= num_stages <= total_iters`.
    InvalidStageCount { num_stages: usize, total_iters: usize },
    /// Queried iteration lies outside `[0, total_iters)`.
    IterOutOfRange { iter: usize, total_iters: usize },
}

impl core::fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidStageCount { num_stages, total_iters } => write!(
                f,
                "stage count {num_stages} is invalid for {total_iters} iterations"
            ),
            Self::IterOutOfRange { iter, total_iters } => {
                write!(f, "iteration {iter} is outside the schedule of {total_iters}")
            }
        }
    }
}

impl core::error::Error for ScheduleError {}

/// Splits `total_iters` into stage durations proportional to the stage
/// index: duration_k ~ k * total / (1 + 2 + ... + K).
///
/// Stages 1..K-1 round to the nearest iteration; the last stage absorbs the
/// remainder so the durations always sum to `total_iters` exactly.
pub fn stage_durations(
    num_stages: usize,
    total_iters: usize,
) -> Result<Vec<usize>, ScheduleError> {
    if num_stages == 0 || total_iters < num_stages {
        return Err(ScheduleError::InvalidStageCount { num_stages, total_iters });
    }
    let weight_sum = (num_stages * (num_stages + 1) / 2) as f64;
    let mut durations = Vec::with_capacity(num_stages);
    let mut assigned = 0usize;
    for stage in 1..num_stages {
        let share = fmath::round(stage as f64 * total_iters as f64 / weight_sum) as usize;
        durations.push(share);
        assigned += share;
    }
    durations.push(total_iters - assigned);
    Ok(durations)
}

/// Number of pool entries admitted during `stage` out of `num_stages`.
///
/// Grows linearly with the stage and reaches the whole pool in the final
/// stage; never less than one so every stage can train.
pub fn stage_quota(stage: usize, num_stages: usize, pool_len: usize) -> usize {
    debug_assert!(stage >= 1 && stage <= num_stages);
    if stage == num_stages {
        pool_len
    } else {
        (stage * pool_len / num_stages).max(1)
    }
}

/// Precomputed stage boundaries over a fixed iteration budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurriculumSchedule {
    durations: Vec<usize>,
    /// boundaries[k] = first iteration AFTER stage k+1 (prefix sums).
    boundaries: Vec<usize>,
}

impl CurriculumSchedule {
    pub fn new(num_stages: usize, total_iters: usize) -> Result<Self, ScheduleError> {
        let durations = stage_durations(num_stages, total_iters)?;
        let mut boundaries = Vec::with_capacity(durations.len());
        let mut acc = 0;
        for d in &durations {
            acc += d;
            boundaries.push(acc);
        }
        Ok(Self { durations, boundaries })
    }

    pub fn num_stages(&self) -> usize {
        self.durations.len()
    }

    pub fn total_iters(&self) -> usize {
        *self.boundaries.last().unwrap_or(&0)
    }

    pub fn durations(&self) -> &[usize] {
        &self.durations
    }

    /// 1-based stage active at `iter`: the smallest stage whose boundary has
    /// not yet been crossed.
    pub fn current_stage(&self, iter: usize) -> Result<usize, ScheduleError> {
        if iter >= self.total_iters() {
            return Err(ScheduleError::IterOutOfRange { iter, total_iters: self.total_iters() });
        }
        let k = self.boundaries.partition_point(|&b| b <= iter);
        Ok(k + 1)
    }
}
