//! Checks the CTC forward-backward implementation against two independent
//! oracles: exhaustive path enumeration for the loss, and central finite
//! differences for the gradient.

use cpl_core::ctc::{ctc_loss_grad, CtcError, TokenSeq};
use cpl_core::Mat;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Softmax computed directly in linear space, independent of the library.
fn softmax_rows(logits: &Mat) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Collapse reimplemented from the definition: merge runs, drop blanks.
fn collapse_reference(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, &id) in path.iter().enumerate() {
        if id != 0 && (i == 0 || path[i - 1] != id) {
            out.push(id);
        }
    }
    out
}

/// Total probability of `target` as a sum over all (classes)^frames paths.
fn enumerate_path_mass(probs: &[Vec<f64>], classes: usize, target: &[u32]) -> f64 {
    let frames = probs.len();
    let total_paths = classes.pow(frames as u32);
    let mut mass = 0.0;
    let mut path = vec![0u32; frames];
    for code in 0..total_paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = (c % classes) as u32;
            c /= classes;
        }
        if collapse_reference(&path) == target {
            let p: f64 = path.iter().enumerate().map(|(t, &id)| probs[t][id as usize]).product();
            mass += p;
        }
    }
    mass
}

fn random_logits(frames: usize, classes: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(frames, classes);
    for v in m.data_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    m
}

/// Every target over `vocab` tokens up to the given length.
fn all_targets(vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for base in &frontier {
            for tok in 1..=vocab {
                let mut t = base.clone();
                t.push(tok);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn loss_matches_exhaustive_enumeration() {
    let mut checked = 0;
    for (frames, vocab) in [(1usize, 2u32), (2, 2), (3, 2), (4, 2), (5, 2), (4, 3), (6, 1)] {
        let classes = vocab as usize + 1;
        let logits = random_logits(frames, classes, 1000 + frames as u64 * 10 + vocab as u64);
        let probs = softmax_rows(&logits);
        for target in all_targets(vocab, 3) {
            let seq = TokenSeq::new(target.clone());
            let result = ctc_loss_grad(&logits, &seq);
            if seq.min_frames() > frames {
                assert!(
                    matches!(result, Err(CtcError::InfeasibleTarget { .. })),
                    "target {target:?} must be infeasible in {frames} frames"
                );
                continue;
            }
            let mass = enumerate_path_mass(&probs, classes, &target);
            assert!(mass > 0.0, "feasible target {target:?} must carry mass");
            let (loss, _) = result.expect("feasible target");
            let expected = -mass.ln();
            assert!(
                (loss - expected).abs() < 1e-8,
                "frames={frames} vocab={vocab} target={target:?}: loss={loss} oracle={expected}"
            );
            checked += 1;
        }
    }
    assert!(checked > 50, "oracle sweep should cover many cases, got {checked}");
}

#[test]
fn gradient_matches_finite_differences() {
    let step = 1e-5;
    for (frames, vocab, target) in [
        (4usize, 2u32, vec![1, 2]),
        (5, 2, vec![2, 2]),
        (3, 3, vec![3]),
        (4, 2, vec![]),
        (6, 2, vec![1, 2, 1]),
    ] {
        let classes = vocab as usize + 1;
        let logits = random_logits(frames, classes, 77 + frames as u64 + vocab as u64);
        let seq = TokenSeq::new(target.clone());
        let (_, grad) = ctc_loss_grad(&logits, &seq).expect("feasible");
        for t in 0..frames {
            for c in 0..classes {
                let mut plus = logits.clone();
                plus[(t, c)] += step;
                let mut minus = logits.clone();
                minus[(t, c)] -= step;
                let (lp, _) = ctc_loss_grad(&plus, &seq).unwrap();
                let (lm, _) = ctc_loss_grad(&minus, &seq).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let an = grad[(t, c)];
                assert!(
                    (fd - an).abs() < 1e-6,
                    "target={target:?} t={t} c={c}: fd={fd} analytic={an}"
                );
            }
        }
    }
}

#[test]
fn target_mass_sums_to_one_over_all_targets() {
    // Over every possible collapsed output (any length <= frames), the CTC
    // probabilities must partition the path space.
    let frames = 4;
    let vocab = 2u32;
    let classes = vocab as usize + 1;
    let logits = random_logits(frames, classes, 9);
    let seq_mass: f64 = all_targets(vocab, frames)
        .into_iter()
        .filter(|t| {
            let s = TokenSeq::new(t.clone());
            s.min_frames() <= frames
        })
        .map(|t| {
            let s = TokenSeq::new(t);
            let (loss, _) = ctc_loss_grad(&logits, &s).unwrap();
            (-loss).exp()
        })
        .sum();
    assert!(
        (seq_mass - 1.0).abs() < 1e-9,
        "total mass over all targets should be 1, got {seq_mass}"
    );
}
