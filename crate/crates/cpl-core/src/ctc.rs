//! CTC loss, exact gradients, and greedy decoding.
//!
//! Class `0` is the blank. A label sequence of length `L` expands to
//! `2L + 1` extended states with blanks interleaved; the forward-backward
//! recursion runs entirely in log space over that lattice.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::matrix::Mat;

/// Reserved blank class id.
pub const BLANK: u32 = 0;

/// Additive identity of log-space accumulation.
///
/// A large negative constant rather than `-inf`: adding a finite log
/// probability to it stays an ordinary `f64`, so the DP never produces
/// `-inf + x` or `inf - inf` NaN traps.
pub const LOG_ZERO: f64 = -1.0e30;

/// `ln(exp(a) + exp(b))` without overflow; respects [`LOG_ZERO`].
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO {
        return LOG_ZERO;
    }
    hi + fmath::ln(1.0 + fmath::exp(lo - hi))
}

/// Normalizes one row of logits into log probabilities in place.
pub(crate) fn log_softmax_row(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter() {
        sum += fmath::exp(v - max);
    }
    let log_norm = max + fmath::ln(sum);
    for v in row.iter_mut() {
        *v -= log_norm;
    }
}

/// Errors surfaced by the CTC kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtcError {
    /// The target cannot be emitted in the given number of frames. CTC needs
    /// one frame per label plus one separating blank per adjacent repeat.
    InfeasibleTarget { required: usize, frames: usize },
    /// A logit or log probability was NaN or infinite.
    NonFiniteInput,
    /// A log-probability row does not sum to one after exponentiation.
    InvalidPosterior { row: usize },
    /// A label sequence contained the reserved blank id.
    BlankLabel,
}

impl core::fmt::Display for CtcError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InfeasibleTarget { required, frames } => write!(
                f,
                "target needs at least {required} frames but only {frames} are available"
            ),
            Self::NonFiniteInput => write!(f, "input contains NaN or infinite values"),
            Self::InvalidPosterior { row } => {
                write!(f, "row {row} of the posterior does not normalize to 1")
            }
            Self::BlankLabel => write!(f, "label sequences must not contain the blank id 0"),
        }
    }
}

impl core::error::Error for CtcError {}

/// A label sequence over non-blank token ids (`id >= 1`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq {
    tokens: Vec<u32>,
}

impl TokenSeq {
    /// Wraps `tokens`; panics if any id is the blank.
    pub fn new(tokens: Vec<u32>) -> Self {
        Self::try_new(tokens).expect("label sequences must not contain the blank id 0")
    }

    /// Wraps `tokens`, rejecting blanks.
    pub fn try_new(tokens: Vec<u32>) -> Result<Self, CtcError> {
        if tokens.contains(&BLANK) {
            return Err(CtcError::BlankLabel);
        }
        Ok(Self { tokens })
    }

    pub fn empty() -> Self {
        Self { tokens: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Number of positions whose label equals the one before it.
    pub fn adjacent_repeats(&self) -> usize {
        self.tokens.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Minimum number of frames needed to emit this sequence under CTC.
    pub fn min_frames(&self) -> usize {
        self.len() + self.adjacent_repeats()
    }
}

impl core::ops::Deref for TokenSeq {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.tokens
    }
}

impl From<TokenSeq> for Vec<u32> {
    fn from(seq: TokenSeq) -> Vec<u32> {
        seq.tokens
    }
}

/// Per-frame log distribution over `vocab + 1` classes (blank is column 0).
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix {
    logp: Mat,
}

impl PosteriorMatrix {
    /// Normalizes raw logits row by row.
    pub fn from_logits(logits: Mat) -> Result<Self, CtcError> {
        if !logits.is_finite() {
            return Err(CtcError::NonFiniteInput);
        }
        assert!(logits.cols() >= 2, "need at least one non-blank class");
        let mut logp = logits;
        for t in 0..logp.rows() {
            log_softmax_row(logp.row_mut(t));
        }
        Ok(Self { logp })
    }

    /// Wraps pre-normalized log probabilities, verifying that each row sums
    /// to one within `1e-6` after exponentiation.
    pub fn from_log_probs(logp: Mat) -> Result<Self, CtcError> {
        if !logp.is_finite() {
            return Err(CtcError::NonFiniteInput);
        }
        assert!(logp.cols() >= 2, "need at least one non-blank class");
        for t in 0..logp.rows() {
            let sum: f64 = logp.row(t).iter().map(|&v| fmath::exp(v)).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(CtcError::InvalidPosterior { row: t });
            }
        }
        Ok(Self { logp })
    }

    pub fn frames(&self) -> usize {
        self.logp.rows()
    }

    /// Class count including the blank.
    pub fn classes(&self) -> usize {
        self.logp.cols()
    }

    pub fn vocab(&self) -> usize {
        self.logp.cols() - 1
    }

    pub fn log_prob(&self, t: usize, class: u32) -> f64 {
        self.logp[(t, class as usize)]
    }

    pub fn prob(&self, t: usize, class: u32) -> f64 {
        fmath::exp(self.log_prob(t, class))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.logp
    }
}

/// Frame-level argmax trace produced by greedy decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePath {
    /// Winning class per frame (blank included).
    pub ids: Vec<u32>,
    /// Probability of the winning class per frame, in linear domain.
    pub probs: Vec<f64>,
}

impl FramePath {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// CTC collapse: merge runs of identical ids, then delete blanks.
pub fn collapse(ids: &[u32]) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut prev = None;
    for &id in ids {
        if prev != Some(id) && id != BLANK {
            tokens.push(id);
        }
        prev = Some(id);
    }
    TokenSeq { tokens }
}

/// Greedy (best-path) decoding: per-frame argmax followed by collapse.
///
/// Ties go to the lowest class id, so output is identical across runs and
/// platforms.
pub fn greedy_decode(post: &PosteriorMatrix) -> (TokenSeq, FramePath) {
    let mut ids = Vec::with_capacity(post.frames());
    let mut probs = Vec::with_capacity(post.frames());
    for t in 0..post.frames() {
        let row = post.as_mat().row(t);
        let mut best = 0usize;
        for (c, &lp) in row.iter().enumerate().skip(1) {
            if lp > row[best] {
                best = c;
            }
        }
        ids.push(best as u32);
        probs.push(fmath::exp(row[best]));
    }
    (collapse(&ids), FramePath { ids, probs })
}

/// Extended label sequence: blanks interleaved around every label.
fn extend_labels(target: &TokenSeq) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &tok in target.tokens() {
        ext.push(tok);
        ext.push(BLANK);
    }
    ext
}

/// CTC negative log likelihood and its exact gradient w.r.t. the logits.
///
/// Runs the forward-backward recursion over the extended label lattice in
/// log space. The returned gradient is `softmax(logits) - gamma`, where
/// `gamma[t][c]` is the posterior probability that frame `t` emits class `c`
/// on a complete alignment; each gradient row therefore sums to zero.
pub fn ctc_loss_grad(logits: &Mat, target: &TokenSeq) -> Result<(f64, Mat), CtcError> {
    if !logits.is_finite() {
        return Err(CtcError::NonFiniteInput);
    }
    let frames = logits.rows();
    let classes = logits.cols();
    assert!(classes >= 2, "need at least one non-blank class");
    let required = target.min_frames();
    if frames < required {
        return Err(CtcError::InfeasibleTarget { required, frames });
    }
    if frames == 0 {
        // Empty target over zero frames is emitted with probability one.
        return Ok((0.0, Mat::zeros(0, classes)));
    }

    let mut logp = logits.clone();
    for t in 0..frames {
        log_softmax_row(logp.row_mut(t));
    }

    let ext = extend_labels(target);
    let states = ext.len();

    // Skip transitions s-2 -> s are allowed only onto a label that differs
    // from the previous label (blanks and repeats must pass through s-1).
    let can_skip =
        |s: usize| -> bool { s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] };

    // alpha[t][s]: log probability of emitting frames 0..=t and being in
    // state s, including the emission at t.
    let mut alpha = Mat::filled(frames, states, LOG_ZERO);
    alpha[(0, 0)] = logp[(0, ext[0] as usize)];
    if states > 1 {
        alpha[(0, 1)] = logp[(0, ext[1] as usize)];
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_sum_exp(acc, alpha[(t - 1, s - 1)]);
            }
            if can_skip(s) {
                acc = log_sum_exp(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = acc + logp[(t, ext[s] as usize)];
        }
    }

    let mut log_z = alpha[(frames - 1, states - 1)];
    if states > 1 {
        log_z = log_sum_exp(log_z, alpha[(frames - 1, states - 2)]);
    }
    if log_z <= LOG_ZERO {
        // All alignments carry zero mass; only possible if the feasibility
        // check above passed on pathological inputs.
        return Err(CtcError::InfeasibleTarget { required, frames });
    }

    // beta[t][s]: log probability of emitting frames t+1.. from state s,
    // excluding the emission at t, so alpha + beta is a full-path mass.
    let mut beta = Mat::filled(frames, states, LOG_ZERO);
    beta[(frames - 1, states - 1)] = 0.0;
    if states > 1 {
        beta[(frames - 1, states - 2)] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[(t + 1, s)] + logp[(t + 1, ext[s] as usize)];
            if s + 1 < states {
                acc = log_sum_exp(acc, beta[(t + 1, s + 1)] + logp[(t + 1, ext[s + 1] as usize)]);
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_sum_exp(acc, beta[(t + 1, s + 2)] + logp[(t + 1, ext[s + 2] as usize)]);
            }
            beta[(t, s)] = acc;
        }
    }

    let mut grad = Mat::zeros(frames, classes);
    let mut occupancy = vec![LOG_ZERO; classes];
    for t in 0..frames {
        occupancy.fill(LOG_ZERO);
        for s in 0..states {
            let c = ext[s] as usize;
            occupancy[c] = log_sum_exp(occupancy[c], alpha[(t, s)] + beta[(t, s)]);
        }
        for c in 0..classes {
            grad[(t, c)] = fmath::exp(logp[(t, c)]) - fmath::exp(occupancy[c] - log_z);
        }
    }

    // log_z is a log probability, so the loss is non-negative up to rounding.
    Ok(((-log_z).max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_logits(frames: usize, classes: usize) -> Mat {
        Mat::zeros(frames, classes)
    }

    #[test]
    fn collapse_merges_runs_then_drops_blanks() {
        assert_eq!(collapse(&[1, 1, 0, 2, 2]).tokens(), &[1, 2]);
        assert_eq!(collapse(&[0, 0]).tokens(), &[] as &[u32]);
        assert_eq!(collapse(&[1, 0, 1]).tokens(), &[1, 1]);
        assert_eq!(collapse(&[]).tokens(), &[] as &[u32]);
    }

    #[test]
    fn token_seq_rejects_blank() {
        assert_eq!(TokenSeq::try_new(vec![1, 0, 2]), Err(CtcError::BlankLabel));
        assert_eq!(TokenSeq::new(vec![3, 3, 1]).adjacent_repeats(), 1);
        // 3 labels plus one separating blank for the repeat.
        assert_eq!(TokenSeq::new(vec![3, 3, 1]).min_frames(), 4);
    }

    #[test]
    fn greedy_ties_break_to_lowest_id() {
        // Uniform rows: blank (id 0) wins every frame, so the PL is empty.
        let post = PosteriorMatrix::from_logits(uniform_logits(4, 3)).unwrap();
        let (pl, path) = greedy_decode(&post);
        assert!(pl.is_empty());
        assert_eq!(path.ids, vec![0, 0, 0, 0]);
        for p in path.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_reads_argmax_per_frame() {
        let mut logits = uniform_logits(3, 3);
        logits[(0, 1)] = 2.0;
        logits[(1, 1)] = 2.0;
        logits[(2, 2)] = 5.0;
        let post = PosteriorMatrix::from_logits(logits).unwrap();
        let (pl, path) = greedy_decode(&post);
        assert_eq!(pl.tokens(), &[1, 2]);
        assert_eq!(path.ids, vec![1, 1, 2]);
    }

    #[test]
    fn uniform_single_frame_empty_target_costs_ln_classes() {
        // P(empty | 1 uniform frame over 3 classes) = P(blank) = 1/3.
        let logits = uniform_logits(1, 3);
        let (loss, grad) = ctc_loss_grad(&logits, &TokenSeq::empty()).unwrap();
        assert!((loss - (3.0f64).ln()).abs() < 1e-12);
        // Blank occupancy is certain: gradient pushes blank up, others down.
        assert!((grad[(0, 0)] - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
        assert!((grad[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((grad[(0, 2)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_label_single_frame() {
        // P([1] | 1 uniform frame over 3 classes) = 1/3.
        let logits = uniform_logits(1, 3);
        let (loss, _) = ctc_loss_grad(&logits, &TokenSeq::new(vec![1])).unwrap();
        assert!((loss - (3.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        let logits = uniform_logits(1, 3);
        let err = ctc_loss_grad(&logits, &TokenSeq::new(vec![1, 2])).unwrap_err();
        assert_eq!(err, CtcError::InfeasibleTarget { required: 2, frames: 1 });
        // A repeat needs a separating blank: [1, 1] requires 3 frames.
        let logits = uniform_logits(2, 3);
        let err = ctc_loss_grad(&logits, &TokenSeq::new(vec![1, 1])).unwrap_err();
        assert_eq!(err, CtcError::InfeasibleTarget { required: 3, frames: 2 });
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let mut logits = uniform_logits(2, 3);
        logits[(1, 2)] = f64::NAN;
        assert_eq!(
            ctc_loss_grad(&logits, &TokenSeq::empty()).unwrap_err(),
            CtcError::NonFiniteInput
        );
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut logits = uniform_logits(5, 4);
        for t in 0..5 {
            for c in 0..4 {
                logits[(t, c)] = ((t * 7 + c * 3) % 5) as f64 * 0.37 - 1.0;
            }
        }
        let (_, grad) = ctc_loss_grad(&logits, &TokenSeq::new(vec![2, 1, 1])).unwrap();
        for t in 0..grad.rows() {
            let sum: f64 = grad.row(t).iter().sum();
            assert!(sum.abs() < 1e-10, "row {t} sums to {sum}");
        }
    }

    #[test]
    fn loss_is_non_negative_and_finite() {
        let mut logits = uniform_logits(6, 3);
        for (i, v) in logits.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.61).sin() * 4.0;
        }
        let (loss, grad) = ctc_loss_grad(&logits, &TokenSeq::new(vec![1, 2, 1])).unwrap();
        assert!(loss >= 0.0 && loss.is_finite());
        assert!(grad.is_finite());
    }

    #[test]
    fn zero_frames_with_empty_target_is_free() {
        let logits = uniform_logits(0, 3);
        let (loss, grad) = ctc_loss_grad(&logits, &TokenSeq::empty()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.rows(), 0);
    }

    #[test]
    fn posterior_validation() {
        let bad = Mat::zeros(2, 3); // rows sum to 3, not 1
        assert_eq!(
            PosteriorMatrix::from_log_probs(bad).unwrap_err(),
            CtcError::InvalidPosterior { row: 0 }
        );
        let ok = Mat::filled(2, 3, (1.0f64 / 3.0).ln());
        let post = PosteriorMatrix::from_log_probs(ok).unwrap();
        assert_eq!(post.frames(), 2);
        assert_eq!(post.vocab(), 2);
        assert!((post.prob(0, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_respects_sentinel() {
        assert_eq!(log_sum_exp(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        let v = log_sum_exp(LOG_ZERO, -1.5);
        assert!((v - (-1.5)).abs() < 1e-12);
        let v = log_sum_exp(0.0, 0.0);
        assert!((v - 2.0f64.ln()).abs() < 1e-12);
    }
}
