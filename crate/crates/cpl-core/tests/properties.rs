//! Property tests for the metric, schedule, pool, and decode invariants.

use cpl_core::ctc::{collapse, greedy_decode, PosteriorMatrix, TokenSeq};
use cpl_core::curriculum::{stage_durations, stage_quota, CurriculumSchedule};
use cpl_core::pool::{EpochSampler, PlPool, PoolEntry, SelectionMode};
use cpl_core::score::{confidence_score, levenshtein, CsVariant};
use cpl_core::{FeatureMatrix, Mat};

use proptest::prelude::*;

/// Memoized textbook recursion, as an independent distance reference.
fn lev_reference(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = if a.is_empty() {
            b.len()
        } else if b.is_empty() {
            a.len()
        } else {
            let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
            let del = go(&a[1..], b, memo) + 1;
            let ins = go(a, &b[1..], memo) + 1;
            sub.min(del).min(ins)
        };
        memo.insert(key, v);
        v
    }
    go(a, b, &mut std::collections::HashMap::new())
}

proptest! {
    #[test]
    fn levenshtein_agrees_with_reference(
        a in prop::collection::vec(0u8..4, 0..9),
        b in prop::collection::vec(0u8..4, 0..9),
    ) {
        prop_assert_eq!(levenshtein(&a, &b), lev_reference(&a, &b));
    }

    #[test]
    fn levenshtein_is_a_metric(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
        c in prop::collection::vec(0u8..4, 0..8),
    ) {
        let dab = levenshtein(&a, &b);
        let dba = levenshtein(&b, &a);
        prop_assert_eq!(dab, dba);
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(dab <= levenshtein(&a, &c) + levenshtein(&c, &b));
        // Bounds: at least the length gap, at most the longer length.
        prop_assert!(dab >= a.len().abs_diff(b.len()));
        prop_assert!(dab <= a.len().max(b.len()));
    }

    #[test]
    fn stage_durations_partition_the_budget(
        num_stages in 1usize..12,
        extra in 0usize..4000,
    ) {
        let total = num_stages + extra;
        let durations = stage_durations(num_stages, total).unwrap();
        prop_assert_eq!(durations.len(), num_stages);
        prop_assert_eq!(durations.iter().sum::<usize>(), total);
        // With a roomy budget the durations strictly increase.
        if total >= 20 * num_stages * num_stages {
            for w in durations.windows(2) {
                prop_assert!(w[0] < w[1], "expected increasing, got {:?}", durations);
            }
        }
    }

    #[test]
    fn quota_is_within_pool_and_monotone(
        num_stages in 1usize..11,
        pool_len in 1usize..500,
    ) {
        let mut prev = 0;
        for stage in 1..=num_stages {
            let q = stage_quota(stage, num_stages, pool_len);
            prop_assert!((1..=pool_len).contains(&q));
            prop_assert!(q >= prev);
            prev = q;
        }
        prop_assert_eq!(prev, pool_len);
    }

    #[test]
    fn schedule_stage_is_total_and_non_decreasing(
        num_stages in 1usize..9,
        extra in 0usize..600,
    ) {
        let total = num_stages + extra;
        let s = CurriculumSchedule::new(num_stages, total).unwrap();
        let mut prev = 1;
        for iter in 0..total {
            let stage = s.current_stage(iter).unwrap();
            prop_assert!((1..=num_stages).contains(&stage));
            prop_assert!(stage >= prev);
            prev = stage;
        }
        prop_assert_eq!(prev, num_stages);
    }

    #[test]
    fn collapse_matches_dedup_then_filter(
        ids in prop::collection::vec(0u32..4, 0..20),
    ) {
        // Alternative formulation of the same rule via std's dedup.
        let mut expect = ids.clone();
        expect.dedup();
        expect.retain(|&t| t != 0);
        let got = collapse(&ids);
        prop_assert_eq!(got.tokens(), &expect[..]);
        prop_assert!(got.len() <= ids.len());
    }

    #[test]
    fn greedy_decode_is_deterministic_and_consistent(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..12),
    ) {
        let frames = rows.len();
        let mut logits = Mat::zeros(frames, 4);
        for (t, row) in rows.iter().enumerate() {
            logits.row_mut(t).copy_from_slice(row);
        }
        let post = PosteriorMatrix::from_logits(logits).unwrap();
        let (pl1, path1) = greedy_decode(&post);
        let (pl2, path2) = greedy_decode(&post);
        prop_assert_eq!(&pl1, &pl2);
        prop_assert_eq!(&path1, &path2);
        prop_assert_eq!(path1.ids.len(), frames);
        // The collapsed path is the pseudo-label.
        prop_assert_eq!(collapse(&path1.ids), pl1.clone());
        // Confidence lives in [0, 1] for any variant.
        for variant in [CsVariant::FirstFrame, CsVariant::RunMean, CsVariant::RunMax] {
            let cs = confidence_score(&path1, variant);
            prop_assert!((0.0..=1.0).contains(&cs));
        }
        // Non-blank run count equals pseudo-label length.
        let runs = path1.ids.windows(2).filter(|w| w[0] != w[1]).count() + 1;
        let blank_runs = {
            let mut n = 0;
            let mut prev = None;
            for &id in &path1.ids {
                if id == 0 && prev != Some(0u32) {
                    n += 1;
                }
                prev = Some(id);
            }
            n
        };
        prop_assert_eq!(runs - blank_runs, pl1.len());
    }

    #[test]
    fn pool_prefix_is_sorted_and_fetches_are_disjoint(
        scores in prop::collection::vec(0.0f64..1.0, 1..40),
        stage in 1usize..6,
        batch in 1usize..7,
    ) {
        let entries: Vec<PoolEntry> = scores
            .iter()
            .enumerate()
            .map(|(i, &cs)| PoolEntry {
                utt_id: i as u32,
                features: FeatureMatrix::zeros(2, 1),
                pl: TokenSeq::new(vec![1]),
                cs,
                crs: None,
                score: 0.0,
                true_ref: TokenSeq::new(vec![1]),
                true_error: 0.0,
            })
            .collect();
        let mut pool = PlPool::new(64);
        pool.fill(entries, stage, 5, SelectionMode::CurriculumCs);

        for w in pool.entries().windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            if w[0].score == w[1].score {
                prop_assert!(w[0].utt_id < w[1].utt_id);
            }
        }
        prop_assert_eq!(pool.selected_len(), stage_quota(stage, 5, scores.len()));

        let mut seen = std::collections::HashSet::new();
        let mut fetched = 0;
        while let Some(batch_entries) = pool.next_batch(batch) {
            for e in batch_entries {
                prop_assert!(seen.insert(e.utt_id), "utterance fetched twice");
                fetched += 1;
            }
        }
        prop_assert_eq!(fetched, pool.selected_len());
        prop_assert!(pool.is_exhausted());
    }

    #[test]
    fn sampler_epochs_are_permutations(
        corpus_len in 1usize..60,
        chunk in 1usize..17,
        seed in 0u64..50,
    ) {
        let mut s = EpochSampler::new(corpus_len, seed).unwrap();
        for _ in 0..2 {
            let mut epoch = Vec::new();
            while epoch.len() < corpus_len {
                let got = s.next_chunk(chunk);
                prop_assert!(got.len() <= chunk);
                prop_assert!(!got.is_empty());
                epoch.extend(got);
            }
            prop_assert_eq!(epoch.len(), corpus_len);
            let mut sorted = epoch.clone();
            sorted.sort_unstable();
            let expect: Vec<u32> = (0..corpus_len as u32).collect();
            prop_assert_eq!(sorted, expect);
        }
    }
}
