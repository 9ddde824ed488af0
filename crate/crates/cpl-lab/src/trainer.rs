//! The training loop: supervised warmup, then the pool-driven
//! semi-supervised phase with curriculum-gated pseudo-label selection.
//!
//! One engine owns the student parameters, the EMA teacher, and the
//! optimizer state. Pool refills score pseudo-labels with the teacher on
//! clean inputs; gradient steps train the student on strongly augmented
//! inputs. Each semi-supervised iteration combines one labeled batch and
//! `mu` pool batches into a single summed-loss optimizer step.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use cpl_core::augment::{augment, weak_of, MaskPolicy};
use cpl_core::ctc::{ctc_loss_grad, greedy_decode, CtcError, TokenSeq};
use cpl_core::curriculum::CurriculumSchedule;
use cpl_core::model::{backward, forward, forward_logits, ModelDims, ParamSet};
use cpl_core::optim::{adam_step, ema_update, AdamState, LrSchedule};
use cpl_core::pool::{EpochSampler, PlPool, PoolEntry, SelectionMode};
use cpl_core::score::{confidence_score, crs, token_error_rate};
use cpl_core::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, TrainConfig};
use crate::corpus::{Corpus, Utterance};
use crate::runlog::{LogRecord, PoolDumpRow, RunLogError, RunLogWriter, RunPaths};
use crate::seed;

/// Dev error rate above which an evaluation counts toward divergence.
pub const DIVERGENCE_TER: f64 = 0.98;
/// Consecutive diverged evaluations that abort the run.
pub const DIVERGENCE_STREAK: u32 = 3;

/// Errors surfaced by training.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "training diverged: dev token error rate {dev_ter:.3} at iteration {iter} stayed above \
         {DIVERGENCE_TER} for {DIVERGENCE_STREAK} consecutive evaluations"
    )]
    DivergenceDetected { iter: u64, dev_ter: f64 },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("alignment: {0}")]
    Ctc(#[from] CtcError),
    #[error("model: {0}")]
    Model(#[from] cpl_core::model::ModelError),
    #[error("optimizer: {0}")]
    Optim(#[from] cpl_core::optim::OptimError),
    #[error("schedule: {0}")]
    Schedule(#[from] cpl_core::curriculum::ScheduleError),
    #[error("pool: {0}")]
    Pool(#[from] cpl_core::pool::PoolError),
    #[error("score: {0}")]
    Score(#[from] cpl_core::score::ScoreError),
    #[error("run log: {0}")]
    RunLog(#[from] RunLogError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Artifact switches that are not hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    /// Write a checkpoint at every evaluation point (the final checkpoint is
    /// always written).
    pub checkpoint_at_evals: bool,
    /// Dump every pool refill's ranked entries to `pool_dump.jsonl`.
    pub dump_pool: bool,
    /// Print one line per evaluation point to standard error.
    pub progress: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { checkpoint_at_evals: true, dump_pool: false, progress: false }
    }
}

/// Summary of one completed run; the run log holds the full history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Dev token error rate right after warmup (of the initial parameters
    /// when warmup is empty).
    pub warmup_dev_ter: f64,
    pub final_dev_ter: f64,
    pub final_dev_ter_ema: f64,
    pub final_test_ter: f64,
    pub final_test_ter_ema: f64,
    pub records: Vec<LogRecord>,
    pub labeled_batches: u64,
    pub unlabeled_batches: u64,
    pub refills: u64,
    pub skipped_infeasible: u64,
    /// Unlabeled fetches that found nothing trainable even after a refill.
    pub starved_fetches: u64,
    /// Teacher and student agreed on the probe coordinate right after the
    /// teacher was initialized (expected: true).
    pub ema_started_equal: bool,
    /// Times the teacher still equaled the student on the probe coordinate
    /// after an update at positive learning rate (expected: 0).
    pub ema_probe_violations: u64,
    /// Every pseudo-label consumed in a step hashed to the value recorded at
    /// its pool's refill (expected: true).
    pub pl_fingerprint_ok: bool,
}

/// Greedy-decodes every utterance with the given weights (no augmentation)
/// and returns the corpus token error rate. Read-only.
pub fn evaluate(params: &ParamSet, utts: &[Utterance]) -> Result<f64, TrainError> {
    let mut acc = cpl_core::score::TerAccumulator::new();
    for u in utts {
        let reference =
            u.transcript.as_ref().expect("evaluation utterances carry transcripts");
        let post = forward(params, &u.features)?;
        let (hyp, _) = greedy_decode(&post);
        acc.add(&hyp, reference);
    }
    Ok(acc.rate())
}

fn add_into(dst: &mut ParamSet, src: &ParamSet) {
    for (a, b) in dst.values_mut().iter_mut().zip(src.values()) {
        *a += b;
    }
}

fn fnv_tokens(seq: &TokenSeq) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &t in seq.iter() {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

struct Engine<'a> {
    cfg: &'a TrainConfig,
    corpus: &'a Corpus,
    opts: TrainOptions,
    paths: &'a RunPaths,
    dims: ModelDims,
    lr_sched: LrSchedule,
    stage_sched: CurriculumSchedule,
    weak_policy: MaskPolicy,
    theta: ParamSet,
    /// Teacher weights; `None` until the semi-supervised phase starts.
    ema: Option<ParamSet>,
    adam: AdamState,
    labeled_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    refill_aug_rng: ChaCha8Rng,
    pool: PlPool,
    sampler: EpochSampler,
    /// Pseudo-label hash per utt_id, rebuilt at every refill.
    fingerprints: HashMap<u32, u64>,
    log: RunLogWriter,
    records: Vec<LogRecord>,
    dump: Option<BufWriter<fs::File>>,
    refill_index: u32,
    labeled_batches: u64,
    unlabeled_batches: u64,
    skipped_infeasible: u64,
    starved_fetches: u64,
    ema_started_equal: bool,
    ema_probe_violations: u64,
    pl_fingerprint_ok: bool,
    last_sup_loss: f64,
    last_unsup_loss: Option<f64>,
    diverged_streak: u32,
    warmup_dev_ter: f64,
}

/// Runs a complete training job (warmup then semi-supervised) and writes
/// its artifacts under `paths`.
pub fn run_training(
    corpus: &Corpus,
    cfg: &TrainConfig,
    paths: &RunPaths,
    opts: TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let spec = corpus.spec();
    let dims = ModelDims::new(cfg.model.window, spec.feature_dim, cfg.model.hidden, spec.vocab_size);
    let total_iters = cfg.warmup_iters + cfg.ssl_iters;
    fs::create_dir_all(&paths.dir)?;
    let dump = if opts.dump_pool {
        Some(BufWriter::new(fs::File::create(paths.pool_dump())?))
    } else {
        None
    };
    let mut engine = Engine {
        cfg,
        corpus,
        opts,
        paths,
        dims,
        lr_sched: LrSchedule::new(cfg.peak_lr, total_iters),
        stage_sched: CurriculumSchedule::new(cfg.curriculum.num_stages, cfg.ssl_iters)?,
        weak_policy: weak_of(&cfg.strong_mask),
        theta: ParamSet::init(dims, seed::derive(cfg.seed, "init", 0)),
        ema: None,
        adam: AdamState::with_defaults(dims.param_count()),
        labeled_rng: ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "labeled-order", 0)),
        aug_rng: ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "augment", 0)),
        refill_aug_rng: ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "refill-augment", 0)),
        pool: PlPool::new(cfg.pool_batches * cfg.batch_size_unlabeled),
        sampler: EpochSampler::new(
            corpus.unlabeled().len(),
            seed::derive(cfg.seed, "pool-sampler", 0),
        )?,
        fingerprints: HashMap::new(),
        log: RunLogWriter::create(&paths.run_log())?,
        records: Vec::new(),
        dump,
        refill_index: 0,
        labeled_batches: 0,
        unlabeled_batches: 0,
        skipped_infeasible: 0,
        starved_fetches: 0,
        ema_started_equal: false,
        ema_probe_violations: 0,
        pl_fingerprint_ok: true,
        last_sup_loss: 0.0,
        last_unsup_loss: None,
        diverged_streak: 0,
        warmup_dev_ter: f64::NAN,
    };
    engine.warmup()?;
    engine.semi_supervised()?;
    engine.finish()
}

impl Engine<'_> {
    /// Accumulates one strongly augmented labeled batch (drawn with
    /// replacement) into `grad`; returns (summed loss, utterances used).
    fn labeled_grads(&mut self, grad: &mut ParamSet) -> Result<(f64, usize), TrainError> {
        let labeled = self.corpus.labeled();
        let mut loss_sum = 0.0;
        let mut used = 0;
        for _ in 0..self.cfg.batch_size_labeled {
            let idx = self.labeled_rng.random_range(0..labeled.len());
            let utt = &labeled[idx];
            let target =
                utt.transcript.as_ref().expect("labeled utterances carry transcripts");
            let aug_seed = self.aug_rng.random::<u64>();
            let aug = augment(&utt.features, &self.cfg.strong_mask, aug_seed);
            let logits = forward_logits(&self.theta, &aug)?;
            match ctc_loss_grad(&logits, target) {
                Ok((loss, glogits)) => {
                    let g = backward(&self.theta, &aug, &glogits)?;
                    add_into(grad, &g);
                    loss_sum += loss;
                    used += 1;
                }
                Err(CtcError::InfeasibleTarget { .. }) => self.skipped_infeasible += 1,
                Err(e) => return Err(e.into()),
            }
        }
        Ok((loss_sum, used))
    }

    /// Draws a fresh pool's worth of unlabeled data, scores it with the
    /// teacher on clean inputs, and refills the pool at the current stage.
    fn refill_pool(&mut self, ssl_iter0: usize) -> Result<(), TrainError> {
        let stage = self.stage_sched.current_stage(ssl_iter0)?;
        let chunk = self.sampler.next_chunk(self.pool.capacity());
        let teacher = self
            .ema
            .as_ref()
            .expect("pool refills happen only in the semi-supervised phase");
        let mut drawn = Vec::with_capacity(chunk.len());
        for &idx in &chunk {
            let utt = &self.corpus.unlabeled()[idx as usize];
            let post = forward(teacher, &utt.features)?;
            let (pl, path) = greedy_decode(&post);
            let cs = confidence_score(&path, self.cfg.cs_variant);
            // The weak-augmented second pass only exists to score
            // consistency; other modes never consume it.
            let crs_val = if self.cfg.selection_mode == SelectionMode::CurriculumCrs {
                let weak_seed = self.refill_aug_rng.random::<u64>();
                let weak = augment(&utt.features, &self.weak_policy, weak_seed);
                let wpost = forward(teacher, &weak)?;
                let (weak_pl, weak_path) = greedy_decode(&wpost);
                let cs_weak = confidence_score(&weak_path, self.cfg.cs_variant);
                Some(crs(cs, cs_weak, &pl, &weak_pl, self.cfg.lambda)?)
            } else {
                None
            };
            let reference = self
                .corpus
                .oracle_transcript(utt.utt_id)
                .expect("unlabeled utterances have oracle transcripts")
                .clone();
            let true_error = token_error_rate(&pl, &reference)
                .expect("oracle transcripts are never empty");
            drawn.push(PoolEntry {
                utt_id: utt.utt_id,
                features: utt.features.clone(),
                pl,
                cs,
                crs: crs_val,
                score: 0.0,
                true_ref: reference,
                true_error,
            });
        }
        self.pool.fill(drawn, stage, self.stage_sched.num_stages(), self.cfg.selection_mode);
        self.fingerprints.clear();
        for e in self.pool.entries() {
            self.fingerprints.insert(e.utt_id, fnv_tokens(&e.pl));
        }
        if let Some(dump) = &mut self.dump {
            let selected = self.pool.selected_len();
            for (i, e) in self.pool.entries().iter().enumerate() {
                let row = PoolDumpRow {
                    refill: self.refill_index,
                    utt_id: e.utt_id,
                    score: e.score.is_finite().then_some(e.score),
                    pl_length: e.pl.len(),
                    true_error: e.true_error,
                    selected: i < selected,
                };
                let text = serde_json::to_string(&row)
                    .map_err(|e| RunLogError::Parse { line: 0, msg: e.to_string() })
                    .map_err(TrainError::RunLog)?;
                dump.write_all(text.as_bytes())?;
                dump.write_all(b"\n")?;
            }
        }
        self.refill_index += 1;
        Ok(())
    }

    /// Fetches up to `mu` pool batches, refilling on exhaustion, and
    /// accumulates their gradients; returns (summed loss, utterances used).
    fn unlabeled_grads(
        &mut self,
        ssl_iter0: usize,
        grad: &mut ParamSet,
    ) -> Result<(f64, usize), TrainError> {
        let mut loss_sum = 0.0;
        let mut used = 0;
        for _ in 0..self.cfg.mu {
            if self.pool.is_exhausted() {
                self.refill_pool(ssl_iter0)?;
            }
            let items: Vec<(u32, FeatureMatrix, TokenSeq)> =
                match self.pool.next_batch(self.cfg.batch_size_unlabeled) {
                    Some(batch) => batch
                        .iter()
                        .map(|e| (e.utt_id, e.features.clone(), e.pl.clone()))
                        .collect(),
                    // A refill admitted nothing trainable (all pseudo-labels
                    // empty); give up on this fetch rather than spin.
                    None => {
                        self.starved_fetches += 1;
                        continue;
                    }
                };
            self.unlabeled_batches += 1;
            for (utt_id, feats, pl) in items {
                if self.fingerprints.get(&utt_id) != Some(&fnv_tokens(&pl)) {
                    self.pl_fingerprint_ok = false;
                }
                let aug_seed = self.aug_rng.random::<u64>();
                let aug = augment(&feats, &self.cfg.strong_mask, aug_seed);
                let logits = forward_logits(&self.theta, &aug)?;
                match ctc_loss_grad(&logits, &pl) {
                    Ok((loss, glogits)) => {
                        let g = backward(&self.theta, &aug, &glogits)?;
                        add_into(grad, &g);
                        loss_sum += loss;
                        used += 1;
                    }
                    Err(CtcError::InfeasibleTarget { .. }) => self.skipped_infeasible += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok((loss_sum, used))
    }

    fn save_checkpoint(&self, path: &Path, iter: u64) -> Result<(), TrainError> {
        let (m, v) = self.adam.moments();
        let ema_values = match &self.ema {
            Some(e) => e.values().to_vec(),
            None => self.theta.values().to_vec(),
        };
        Checkpoint {
            dims: self.dims,
            iter,
            adam_step: self.adam.step(),
            params: self.theta.values().to_vec(),
            ema: ema_values,
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
        }
        .save(path)?;
        Ok(())
    }

    /// Mean finite score and mean true error over the admitted prefix.
    fn pool_stats(&self) -> (Option<f64>, Option<f64>, Option<usize>) {
        let selected = &self.pool.entries()[..self.pool.selected_len()];
        if selected.is_empty() {
            return (None, None, Some(0));
        }
        let finite: Vec<f64> =
            selected.iter().map(|e| e.score).filter(|s| s.is_finite()).collect();
        let mean_score = if finite.is_empty() {
            None
        } else {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        };
        let mean_err =
            selected.iter().map(|e| e.true_error).sum::<f64>() / selected.len() as f64;
        (mean_score, Some(mean_err), Some(selected.len()))
    }

    /// Evaluates, appends one record, and optionally checkpoints. Returns
    /// the student's dev error rate.
    fn log_point(&mut self, global_iter: u64, stage: usize, lr: f64) -> Result<f64, TrainError> {
        let dev = self.corpus.dev();
        let dev_ter = evaluate(&self.theta, dev)?;
        let in_ssl = self.ema.is_some();
        let dev_ter_ema = match &self.ema {
            Some(e) => Some(evaluate(e, dev)?),
            None => None,
        };
        let (pool_mean_score, pool_mean_true_error, selected_count) =
            if in_ssl { self.pool_stats() } else { (None, None, None) };
        let rec = LogRecord {
            iter: global_iter,
            stage,
            lr,
            sup_loss: self.last_sup_loss,
            unsup_loss: self.last_unsup_loss,
            dev_ter,
            dev_ter_ema,
            pool_mean_score,
            pool_mean_true_error,
            selected_count,
            skipped_infeasible: self.skipped_infeasible,
        };
        if self.opts.progress {
            match rec.dev_ter_ema {
                Some(ema) => eprintln!(
                    "iter {global_iter} stage {stage} lr {lr:.5} sup {:.3} unsup {} \
                     dev {dev_ter:.4} (ema {ema:.4})",
                    rec.sup_loss,
                    rec.unsup_loss.map_or("-".into(), |u| format!("{u:.3}")),
                ),
                None => eprintln!(
                    "iter {global_iter} warmup lr {lr:.5} sup {:.3} dev {dev_ter:.4}",
                    rec.sup_loss
                ),
            }
        }
        self.log.append(&rec)?;
        self.records.push(rec);
        if self.opts.checkpoint_at_evals {
            self.save_checkpoint(&self.paths.checkpoint_at(global_iter), global_iter)?;
        }
        Ok(dev_ter)
    }

    fn warmup(&mut self) -> Result<(), TrainError> {
        let s = self.cfg.warmup_iters;
        let mut last_logged_ter = None;
        for it in 1..=s {
            let lr = self.lr_sched.lr_at(it - 1);
            let mut grad = ParamSet::zeros(self.dims);
            let (loss_sum, used) = self.labeled_grads(&mut grad)?;
            adam_step(&mut self.theta, &mut self.adam, &grad, lr)?;
            self.labeled_batches += 1;
            self.last_sup_loss = loss_sum / used.max(1) as f64;
            if it % self.cfg.eval_every == 0 || it == s {
                last_logged_ter = Some(self.log_point(it as u64, 0, lr)?);
            }
        }
        self.warmup_dev_ter = match last_logged_ter {
            Some(ter) => ter,
            None => evaluate(&self.theta, self.corpus.dev())?,
        };
        self.save_checkpoint(&self.paths.warmup_checkpoint(), s as u64)?;
        Ok(())
    }

    fn semi_supervised(&mut self) -> Result<(), TrainError> {
        self.ema = Some(self.theta.clone());
        let probe = self.dims.param_count() - 1;
        self.ema_started_equal =
            self.ema.as_ref().expect("just set").values()[probe].to_bits()
                == self.theta.values()[probe].to_bits();
        let alpha = self.cfg.effective_ema_alpha();
        let s = self.cfg.warmup_iters;
        let f = self.cfg.ssl_iters;
        for j in 1..=f {
            let ssl_iter0 = j - 1;
            let lr = self.lr_sched.lr_at(s + ssl_iter0);
            let mut grad = ParamSet::zeros(self.dims);
            let (sup_sum, sup_used) = self.labeled_grads(&mut grad)?;
            let (unsup_sum, unsup_used) = self.unlabeled_grads(ssl_iter0, &mut grad)?;
            adam_step(&mut self.theta, &mut self.adam, &grad, lr)?;
            self.labeled_batches += 1;
            let teacher = self.ema.as_mut().expect("teacher exists in this phase");
            ema_update(teacher, &self.theta, alpha)?;
            if lr > 0.0
                && teacher.values()[probe].to_bits() == self.theta.values()[probe].to_bits()
            {
                self.ema_probe_violations += 1;
            }
            self.last_sup_loss = sup_sum / sup_used.max(1) as f64;
            self.last_unsup_loss =
                if unsup_used > 0 { Some(unsup_sum / unsup_used as f64) } else { None };
            if j % self.cfg.eval_every == 0 || j == f {
                let stage = self.stage_sched.current_stage(ssl_iter0)?;
                let dev_ter = self.log_point((s + j) as u64, stage, lr)?;
                if dev_ter > DIVERGENCE_TER {
                    self.diverged_streak += 1;
                } else {
                    self.diverged_streak = 0;
                }
                if self.diverged_streak >= DIVERGENCE_STREAK {
                    return Err(TrainError::DivergenceDetected {
                        iter: (s + j) as u64,
                        dev_ter,
                    });
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<TrainOutcome, TrainError> {
        if let Some(dump) = &mut self.dump {
            dump.flush()?;
        }
        let total = (self.cfg.warmup_iters + self.cfg.ssl_iters) as u64;
        self.save_checkpoint(&self.paths.final_checkpoint(), total)?;
        let teacher = self.ema.as_ref().expect("completed runs have a teacher");
        let last = self.records.last().expect("ssl_iters >= 1 guarantees records");
        let final_dev_ter = last.dev_ter;
        let final_dev_ter_ema =
            last.dev_ter_ema.expect("final record is a semi-supervised record");
        let final_test_ter = evaluate(&self.theta, self.corpus.test())?;
        let final_test_ter_ema = evaluate(teacher, self.corpus.test())?;
        Ok(TrainOutcome {
            warmup_dev_ter: self.warmup_dev_ter,
            final_dev_ter,
            final_dev_ter_ema,
            final_test_ter,
            final_test_ter_ema,
            records: self.records,
            labeled_batches: self.labeled_batches,
            unlabeled_batches: self.unlabeled_batches,
            refills: self.refill_index as u64,
            skipped_infeasible: self.skipped_infeasible,
            starved_fetches: self.starved_fetches,
            ema_started_equal: self.ema_started_equal,
            ema_probe_violations: self.ema_probe_violations,
            pl_fingerprint_ok: self.pl_fingerprint_ok,
        })
    }
}
