//! The temporary scored pseudo-label pool and the epoch sampler that feeds
//! it.
//!
//! Each refill draws a fresh slice of the unlabeled corpus, scores it with
//! the current teacher, sorts it, and admits a curriculum-controlled prefix.
//! Entries are consumed in sorted order and the pool is discarded once its
//! admitted prefix has been walked, so scores never go stale.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::TokenSeq;
use crate::curriculum::stage_quota;
use crate::matrix::FeatureMatrix;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Errors surfaced by pool construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PoolError {
    /// Cannot sample from an empty unlabeled corpus.
    EmptyCorpus,
}

impl core::fmt::Display for PoolError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyCorpus => write!(f, "unlabeled corpus is empty"),
        }
    }
}

impl core::error::Error for PoolError {}

/// How a refilled pool decides which entries are admitted for training.
///
/// Round-trips through its display form (`curriculum-cs`, `threshold(0.95)`,
/// ...), which is also the serialized representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionMode {
    /// Rank by confidence score, admit the stage quota.
    CurriculumCs,
    /// Rank by consistency-regularized score, admit the stage quota.
    CurriculumCrs,
    /// Admit every entry whose confidence score clears the threshold,
    /// ignoring the curriculum.
    Threshold(f64),
    /// Admit everything drawn.
    FullPool,
    /// Rank by true transcript error (cheating baseline), admit the stage
    /// quota. Upper-bounds what any selection score could achieve.
    Oracle,
}

impl core::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::CurriculumCs => write!(f, "curriculum-cs"),
            Self::CurriculumCrs => write!(f, "curriculum-crs"),
            Self::Threshold(tau) => write!(f, "threshold({tau})"),
            Self::FullPool => write!(f, "full-pool"),
            Self::Oracle => write!(f, "oracle"),
        }
    }
}

/// A selection-mode string that matched no known form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseModeError {
    input: alloc::string::String,
}

impl core::fmt::Display for ParseModeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "unknown selection mode `{}` (expected curriculum-cs, curriculum-crs, full-pool, \
             oracle, or threshold(x))",
            self.input
        )
    }
}

impl core::error::Error for ParseModeError {}

impl core::str::FromStr for SelectionMode {
    type Err = ParseModeError;

    /// Accepts the display forms plus `threshold:x` and `threshold=x`.
    /// The threshold's range is a config concern, not a parse concern.
    fn from_str(s: &str) -> Result<Self, ParseModeError> {
        let t = s.trim();
        match t {
            "curriculum-cs" => return Ok(Self::CurriculumCs),
            "curriculum-crs" => return Ok(Self::CurriculumCrs),
            "full-pool" => return Ok(Self::FullPool),
            "oracle" => return Ok(Self::Oracle),
            _ => {}
        }
        if let Some(rest) = t.strip_prefix("threshold") {
            let inner = rest.trim_start_matches(['(', ':', '=']).trim_end_matches(')');
            if let Ok(tau) = inner.parse::<f64>() {
                return Ok(Self::Threshold(tau));
            }
        }
        Err(ParseModeError { input: alloc::string::String::from(t) })
    }
}

#[cfg(feature = "serde")]
impl Serialize for SelectionMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> Deserialize<'de> for SelectionMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = alloc::string::String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One unlabeled utterance staged for pseudo-label training.
#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub utt_id: u32,
    pub features: FeatureMatrix,
    /// Greedy decode of the clean features under the teacher.
    pub pl: TokenSeq,
    pub cs: f64,
    /// Present only when the consistency-regularized score was computed.
    pub crs: Option<f64>,
    /// Ranking key; assigned by [`PlPool::fill`] from the selection mode.
    pub score: f64,
    /// Hidden ground truth, carried for instrumentation only.
    pub true_ref: TokenSeq,
    /// Token error rate of `pl` against `true_ref`.
    pub true_error: f64,
}

/// Without-replacement sampler over utterance indices.
///
/// Walks a seeded permutation of the corpus; each epoch is reshuffled when
/// the previous one is used up. A chunk never straddles an epoch boundary,
/// so the final chunk of an epoch may come up short.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<u32>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(corpus_len: usize, seed: u64) -> Result<Self, PoolError> {
        if corpus_len == 0 {
            return Err(PoolError::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<u32> = (0..corpus_len as u32).collect();
        order.shuffle(&mut rng);
        Ok(Self { order, pos: 0, rng })
    }

    pub fn epoch_len(&self) -> usize {
        self.order.len()
    }

    pub fn remaining_in_epoch(&self) -> usize {
        self.order.len() - self.pos
    }

    /// Next slice of at most `max_len` indices; reshuffles when an epoch is
    /// exhausted.
    pub fn next_chunk(&mut self, max_len: usize) -> Vec<u32> {
        assert!(max_len >= 1, "chunk size must be positive");
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let take = max_len.min(self.order.len() - self.pos);
        let chunk = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        chunk
    }
}

/// The temporary pool: a sorted, stage-gated buffer of scored pseudo-labels.
#[derive(Clone, Debug)]
pub struct PlPool {
    capacity: usize,
    entries: Vec<PoolEntry>,
    /// Admitted prefix length; only `entries[..selected]` may be fetched.
    selected: usize,
    cursor: usize,
    stage: usize,
}

impl PlPool {
    /// `capacity` is the maximum number of entries per refill.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "pool capacity must be positive");
        Self { capacity, entries: Vec::new(), selected: 0, cursor: 0, stage: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stage frozen at the most recent fill (0 before the first fill).
    pub fn stage(&self) -> usize {
        self.stage
    }

    /// All drawn entries in ranked order, including non-admitted ones.
    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn selected_len(&self) -> usize {
        self.selected
    }

    /// True when no admitted, non-empty pseudo-label remains to fetch.
    pub fn is_exhausted(&self) -> bool {
        self.entries[self.cursor..self.selected].iter().all(|e| e.pl.is_empty())
    }

    /// Replaces the pool contents with a freshly scored draw.
    ///
    /// Assigns each entry's ranking score from `mode` (confidence,
    /// consistency-regularized, or negated true error for the oracle), with
    /// empty pseudo-labels forced to `-inf` so untrainable entries sort last.
    /// Sorts by score descending with `utt_id` as the tie-break, then admits
    /// a prefix: the stage quota for curriculum and oracle modes, the
    /// threshold count for threshold mode, everything for full-pool.
    pub fn fill(
        &mut self,
        mut drawn: Vec<PoolEntry>,
        stage: usize,
        num_stages: usize,
        mode: SelectionMode,
    ) {
        assert!(
            drawn.len() <= self.capacity,
            "draw of {} exceeds pool capacity {}",
            drawn.len(),
            self.capacity
        );
        for e in &mut drawn {
            e.score = if e.pl.is_empty() {
                f64::NEG_INFINITY
            } else {
                match mode {
                    SelectionMode::CurriculumCs
                    | SelectionMode::Threshold(_)
                    | SelectionMode::FullPool => e.cs,
                    SelectionMode::CurriculumCrs => e
                        .crs
                        .expect("consistency-regularized mode requires crs-scored entries"),
                    SelectionMode::Oracle => -e.true_error,
                }
            };
        }
        drawn.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.utt_id.cmp(&b.utt_id))
        });
        let admitted = match mode {
            // tau = 0 is the documented "keep everything" edge case.
            SelectionMode::Threshold(tau) if tau <= 0.0 => drawn.len(),
            SelectionMode::Threshold(tau) => {
                drawn.iter().filter(|e| !e.pl.is_empty() && e.cs >= tau).count()
            }
            SelectionMode::FullPool => drawn.len(),
            _ => {
                if drawn.is_empty() {
                    0
                } else {
                    stage_quota(stage, num_stages, drawn.len())
                }
            }
        };
        self.entries = drawn;
        self.selected = admitted;
        self.cursor = 0;
        self.stage = stage;
    }

    /// Fetches up to `batch_size` admitted entries in ranked order, skipping
    /// empty pseudo-labels. Returns `None` once the admitted prefix is used
    /// up; consecutive fetches are disjoint.
    pub fn next_batch(&mut self, batch_size: usize) -> Option<Vec<&PoolEntry>> {
        assert!(batch_size >= 1, "batch size must be positive");
        let mut picked = Vec::new();
        while self.cursor < self.selected && picked.len() < batch_size {
            let i = self.cursor;
            self.cursor += 1;
            if !self.entries[i].pl.is_empty() {
                picked.push(i);
            }
        }
        if picked.is_empty() {
            None
        } else {
            Some(picked.into_iter().map(|i| &self.entries[i]).collect())
        }
    }
}
