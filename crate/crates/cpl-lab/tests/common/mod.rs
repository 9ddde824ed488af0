//! Shared fixtures for the integration tests: a corpus small enough to
//! generate in milliseconds and a training config that finishes a full
//! warmup-plus-semi-supervised run in well under a second.

#![allow(dead_code)]

use std::path::Path;

use cpl_lab::config::{CurriculumConfig, ModelConfig, TrainConfig};
use cpl_lab::corpus::{generate, Corpus, CorpusSpec};

/// Three tokens, eight feature dims, two dozen utterances per labeled
/// split: big enough to exercise every code path, small enough that a
/// whole training run takes a fraction of a second.
pub fn tiny_spec() -> CorpusSpec {
    CorpusSpec {
        vocab_size: 3,
        feature_dim: 8,
        tokens_per_utt: [2, 4],
        frames_per_token: [2, 4],
        noise_easy: 0.05,
        noise_hard: 0.35,
        hard_fraction: 0.5,
        shift_strength: 0.5,
        n_labeled: 24,
        n_unlabeled: 60,
        n_dev: 24,
        n_test: 24,
        seed: 0,
    }
}

/// Training config matched to [`tiny_spec`]: short but long enough that
/// the decoder has left its all-blank phase before the divergence guard
/// starts watching.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        warmup_iters: 150,
        ssl_iters: 150,
        eval_every: 50,
        batch_size_labeled: 4,
        batch_size_unlabeled: 4,
        mu: 2,
        pool_batches: 4,
        curriculum: CurriculumConfig { num_stages: 3 },
        model: ModelConfig { hidden: 16, window: 1 },
        ..TrainConfig::default()
    }
}

/// Generates `spec` under `dir` and loads it back.
pub fn make_corpus(spec: &CorpusSpec, dir: &Path) -> Corpus {
    generate(spec, dir).expect("corpus generation");
    Corpus::load(dir).expect("corpus load")
}
