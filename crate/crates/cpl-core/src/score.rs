//! Pseudo-label quality scores and edit-distance metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::ctc::{FramePath, TokenSeq, BLANK};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Errors surfaced by the scoring functions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScoreError {
    /// The consistency penalty weight must be non-negative.
    NegativeLambda,
    /// Token error rate against an empty reference is undefined.
    EmptyReference,
}

impl core::fmt::Display for ScoreError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NegativeLambda => write!(f, "penalty weight lambda must be non-negative"),
            Self::EmptyReference => write!(f, "token error rate needs a non-empty reference"),
        }
    }
}

impl core::error::Error for ScoreError {}

/// Which per-run probability feeds the confidence score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CsVariant {
    /// Probability at the first frame of each run.
    #[default]
    FirstFrame,
    /// Mean probability across the run.
    RunMean,
    /// Maximum probability across the run.
    RunMax,
}

/// Confidence score of a greedy decode: the mean, over non-blank runs in the
/// frame path, of one representative probability per run.
///
/// Blank runs carry no emitted token and are excluded. Each non-blank run
/// collapses to exactly one pseudo-label token, so the run count equals the
/// pseudo-label length; an all-blank (empty) decode scores `0.0`.
pub fn confidence_score(path: &FramePath, variant: CsVariant) -> f64 {
    let mut sum = 0.0;
    let mut runs = 0usize;
    let mut i = 0;
    while i < path.ids.len() {
        let id = path.ids[i];
        let mut j = i + 1;
        while j < path.ids.len() && path.ids[j] == id {
            j += 1;
        }
        if id != BLANK {
            let probs = &path.probs[i..j];
            sum += match variant {
                CsVariant::FirstFrame => probs[0],
                CsVariant::RunMean => probs.iter().sum::<f64>() / probs.len() as f64,
                CsVariant::RunMax => probs.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(p)),
            };
            runs += 1;
        }
        i = j;
    }
    if runs == 0 {
        0.0
    } else {
        sum / runs as f64
    }
}

/// Levenshtein distance with unit insert, delete, and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Two-row DP over the shorter sequence keeps memory at O(min(|a|, |b|)).
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut curr = vec![0usize; short.len() + 1];
    for (i, lt) in long.iter().enumerate() {
        curr[0] = i + 1;
        for (j, st) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lt != st);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        core::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// Consistency-regularized score: mean of the clean and weak confidence
/// scores minus `lambda` times the normalized edit distance between the two
/// decodes.
///
/// The distance is normalized by the clean pseudo-label length; when that is
/// empty, by `max(1, |weak_pl|)` so the penalty stays finite.
pub fn crs(
    cs_clean: f64,
    cs_weak: f64,
    pl: &TokenSeq,
    weak_pl: &TokenSeq,
    lambda: f64,
) -> Result<f64, ScoreError> {
    if lambda < 0.0 {
        return Err(ScoreError::NegativeLambda);
    }
    let denom = if pl.is_empty() { weak_pl.len().max(1) } else { pl.len() };
    let dist = levenshtein(pl, weak_pl) as f64;
    Ok((cs_clean + cs_weak) / 2.0 - lambda * dist / denom as f64)
}

/// Token error rate: edit distance divided by reference length.
pub fn token_error_rate(hyp: &TokenSeq, reference: &TokenSeq) -> Result<f64, ScoreError> {
    if reference.is_empty() {
        return Err(ScoreError::EmptyReference);
    }
    Ok(levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

/// Corpus-level token error rate: total edits over total reference tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TerAccumulator {
    edits: usize,
    ref_tokens: usize,
}

impl TerAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, hyp: &TokenSeq, reference: &TokenSeq) {
        self.edits += levenshtein(hyp, reference);
        self.ref_tokens += reference.len();
    }

    pub fn utterances_seen(&self) -> (usize, usize) {
        (self.edits, self.ref_tokens)
    }

    pub fn rate(&self) -> f64 {
        if self.ref_tokens == 0 {
            if self.edits == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.edits as f64 / self.ref_tokens as f64
        }
    }
}

/// A pseudo-label with the scores attached during pool refill.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPl {
    pub pl: TokenSeq,
    pub cs: f64,
    /// Decode of the weakly perturbed view, when the consistency score ran.
    pub perturbed_pl: Option<TokenSeq>,
    pub crs: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(ids: &[u32], probs: &[f64]) -> FramePath {
        FramePath { ids: ids.to_vec(), probs: probs.to_vec() }
    }

    #[test]
    fn cs_averages_first_frame_of_non_blank_runs() {
        let p = path(&[1, 1, 0, 2], &[0.9, 0.8, 0.7, 0.6]);
        assert!((confidence_score(&p, CsVariant::FirstFrame) - 0.75).abs() < 1e-12);
        assert!((confidence_score(&p, CsVariant::RunMean) - 0.725).abs() < 1e-12);
        assert!((confidence_score(&p, CsVariant::RunMax) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cs_of_all_blank_path_is_zero() {
        let p = path(&[0, 0, 0], &[0.99, 0.99, 0.99]);
        assert_eq!(confidence_score(&p, CsVariant::FirstFrame), 0.0);
        assert_eq!(confidence_score(&path(&[], &[]), CsVariant::FirstFrame), 0.0);
    }

    #[test]
    fn cs_counts_runs_not_frames() {
        // Same token twice, separated by a blank: two runs, two PL tokens.
        let p = path(&[1, 0, 1], &[0.5, 0.9, 0.7]);
        assert!((confidence_score(&p, CsVariant::FirstFrame) - 0.6).abs() < 1e-12);
        // A single certain token scores 1.0.
        let p = path(&[1], &[1.0]);
        assert_eq!(confidence_score(&p, CsVariant::FirstFrame), 1.0);
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein::<u32>(&[], &[]), 0);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[1, 2], &[2, 1]), 2);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(levenshtein(&[], &[7, 8, 9]), 3);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn crs_penalizes_decode_disagreement() {
        let pl = TokenSeq::new(vec![1, 2, 3]);
        let weak = TokenSeq::new(vec![1, 3]);
        let v = crs(0.9, 0.8, &pl, &weak, 1.0).unwrap();
        assert!((v - (0.85 - 1.0 / 3.0)).abs() < 1e-12);
        // Perfect agreement leaves the mean confidence untouched.
        let v = crs(0.9, 0.8, &pl, &pl, 1.0).unwrap();
        assert!((v - 0.85).abs() < 1e-12);
        // One substitution at length two costs half a lambda.
        let q = TokenSeq::new(vec![1, 2]);
        let q_tilde = TokenSeq::new(vec![1, 3]);
        let v = crs(0.9, 0.7, &q, &q_tilde, 1.0).unwrap();
        assert!((v - 0.30).abs() < 1e-12);
        // lambda = 0 disables the penalty entirely.
        let v = crs(0.9, 0.7, &q, &q_tilde, 0.0).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn crs_empty_pl_uses_weak_length() {
        let empty = TokenSeq::empty();
        let weak = TokenSeq::new(vec![1, 2]);
        // Distance 2 normalized by |weak| = 2.
        let v = crs(0.0, 0.5, &empty, &weak, 1.0).unwrap();
        assert!((v - (0.25 - 1.0)).abs() < 1e-12);
        // Both empty: denominator clamps to 1, distance 0.
        let v = crs(0.0, 0.0, &empty, &empty, 1.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn crs_rejects_negative_lambda() {
        let pl = TokenSeq::new(vec![1]);
        assert_eq!(crs(0.5, 0.5, &pl, &pl, -0.1), Err(ScoreError::NegativeLambda));
    }

    #[test]
    fn ter_divides_by_reference_length() {
        let hyp = TokenSeq::new(vec![1, 2]);
        let reference = TokenSeq::new(vec![1, 2, 3]);
        let ter = token_error_rate(&hyp, &reference).unwrap();
        assert!((ter - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            token_error_rate(&hyp, &TokenSeq::empty()),
            Err(ScoreError::EmptyReference)
        );
        // Empty hypothesis: every reference token is a deletion.
        let ter = token_error_rate(&TokenSeq::empty(), &TokenSeq::new(vec![1, 2, 3, 4])).unwrap();
        assert_eq!(ter, 1.0);
        // One substitution in three.
        let ter = token_error_rate(
            &TokenSeq::new(vec![1, 2, 3]),
            &TokenSeq::new(vec![1, 7, 3]),
        )
        .unwrap();
        assert!((ter - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_ter_pools_edits_and_lengths() {
        let mut acc = TerAccumulator::new();
        acc.add(&TokenSeq::new(vec![1, 2]), &TokenSeq::new(vec![1, 2, 3]));
        acc.add(&TokenSeq::new(vec![4]), &TokenSeq::new(vec![4]));
        // 1 edit over 4 reference tokens, not the mean of 1/3 and 0.
        assert!((acc.rate() - 0.25).abs() < 1e-12);
        assert_eq!(TerAccumulator::new().rate(), 0.0);
    }
}
