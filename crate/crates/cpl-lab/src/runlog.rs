//! Run artifacts: the JSONL run log, the run manifest, and pool dumps.
//!
//! The run log is the machine-readable training record: one JSON object per
//! line, one line per evaluation point. It deliberately contains no
//! timestamps so that two runs with the same config and seed produce
//! byte-identical files; wall-clock lives in the manifest, which is not part
//! of the determinism contract.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;

/// Errors surfaced by run-log IO.
#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log iter went backwards: {prev} then {next}")]
    NonMonotoneIter { prev: u64, next: u64 },
    #[error("run log parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One evaluation-point record. Fields that only exist once the
/// semi-supervised phase is running (pool statistics, unsupervised loss,
/// teacher error) are `None` during warmup and serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Global iteration, counting warmup and semi-supervised steps together.
    pub iter: u64,
    /// Curriculum stage (1-based) at this iteration; 0 during warmup.
    pub stage: usize,
    pub lr: f64,
    /// Supervised CTC loss of the most recent step, averaged per utterance.
    pub sup_loss: f64,
    pub unsup_loss: Option<f64>,
    /// Dev token error rate of the student weights.
    pub dev_ter: f64,
    /// Dev token error rate of the EMA teacher weights.
    pub dev_ter_ema: Option<f64>,
    pub pool_mean_score: Option<f64>,
    pub pool_mean_true_error: Option<f64>,
    /// Entries admitted at the pool's most recent refill.
    pub selected_count: Option<usize>,
    /// Cumulative unlabeled utterances skipped because their pseudo-label
    /// could not be aligned to the frame count.
    pub skipped_infeasible: u64,
}

/// Appends records to a JSONL file, enforcing monotone iteration order.
pub struct RunLogWriter {
    out: BufWriter<fs::File>,
    last_iter: Option<u64>,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self, RunLogError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Self { out: BufWriter::new(fs::File::create(path)?), last_iter: None })
    }

    pub fn append(&mut self, rec: &LogRecord) -> Result<(), RunLogError> {
        if let Some(prev) = self.last_iter {
            if rec.iter <= prev {
                return Err(RunLogError::NonMonotoneIter { prev, next: rec.iter });
            }
        }
        self.last_iter = Some(rec.iter);
        serde_json::to_writer(&mut self.out, rec).map_err(|e| RunLogError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a complete run log back.
pub fn read_run_log(path: &Path) -> Result<Vec<LogRecord>, RunLogError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line)
            .map_err(|e| RunLogError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// One pool entry as observed at a refill; written when pool dumping is
/// enabled on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDumpRow {
    /// Refill ordinal, 0-based, so rows from successive refills stay
    /// distinguishable inside one file.
    pub refill: u32,
    pub utt_id: u32,
    /// `None` encodes the minus-infinity score of an empty pseudo-label,
    /// which JSON has no literal for.
    pub score: Option<f64>,
    pub pl_length: usize,
    pub true_error: f64,
    pub selected: bool,
}

/// Reads a complete pool dump back.
pub fn read_pool_dump(path: &Path) -> Result<Vec<PoolDumpRow>, RunLogError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PoolDumpRow = serde_json::from_str(&line)
            .map_err(|e| RunLogError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(row);
    }
    Ok(out)
}

/// Everything needed to identify and resume a run, written atomically at
/// run start. The embedded config snapshot is the source of truth: feeding
/// it back reproduces the identical run log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// The config file the run was launched with, if any.
    pub config_path: Option<String>,
    /// Fully resolved config after defaults and overrides.
    pub config: TrainConfig,
    pub corpus_dir: String,
    /// File name to SHA-256, copied from the corpus at load time.
    pub corpus_checksums: BTreeMap<String, String>,
    pub artifacts: ArtifactPaths,
    pub wall_clock_start_unix_secs: u64,
    pub seed: u64,
}

/// Output files of one run, relative to the run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub run_log: String,
    pub final_checkpoint: String,
    pub pool_dump: Option<String>,
}

impl RunManifest {
    /// Atomic write: temp file in the target directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), RunLogError> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            let text = serde_json::to_string_pretty(self)
                .map_err(|e| RunLogError::Parse { line: 0, msg: e.to_string() })?;
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| RunLogError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunLogError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RunLogError::Parse { line: 0, msg: e.to_string() })
    }
}

/// Standard artifact layout under a run directory.
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("run_manifest.json")
    }

    pub fn run_log(&self) -> PathBuf {
        self.dir.join("run_log.jsonl")
    }

    pub fn warmup_checkpoint(&self) -> PathBuf {
        self.dir.join("warmup.ckpt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }

    pub fn checkpoint_at(&self, iter: u64) -> PathBuf {
        self.dir.join(format!("iter_{iter:08}.ckpt"))
    }

    pub fn pool_dump(&self) -> PathBuf {
        self.dir.join("pool_dump.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: u64) -> LogRecord {
        LogRecord {
            iter,
            stage: 1,
            lr: 0.001,
            sup_loss: 2.5,
            unsup_loss: Some(3.0),
            dev_ter: 0.4,
            dev_ter_ema: Some(0.39),
            pool_mean_score: Some(0.8),
            pool_mean_true_error: Some(0.2),
            selected_count: Some(16),
            skipped_infeasible: 0,
        }
    }

    #[test]
    fn log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = RunLogWriter::create(&path).unwrap();
        w.append(&rec(50)).unwrap();
        w.append(&rec(100)).unwrap();
        drop(w);
        let back = read_run_log(&path).unwrap();
        assert_eq!(back, vec![rec(50), rec(100)]);
    }

    #[test]
    fn non_monotone_iters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = RunLogWriter::create(&path).unwrap();
        w.append(&rec(50)).unwrap();
        assert!(matches!(
            w.append(&rec(50)),
            Err(RunLogError::NonMonotoneIter { prev: 50, next: 50 })
        ));
    }

    #[test]
    fn warmup_records_serialize_nulls() {
        let r = LogRecord {
            unsup_loss: None,
            dev_ter_ema: None,
            pool_mean_score: None,
            pool_mean_true_error: None,
            selected_count: None,
            stage: 0,
            ..rec(10)
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"unsup_loss\":null"));
        let back: LogRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run_manifest.json");
        let m = RunManifest {
            config_path: Some("cfg.json".into()),
            config: TrainConfig::default(),
            corpus_dir: "corpus".into(),
            corpus_checksums: BTreeMap::from([("spec.json".into(), "ab".into())]),
            artifacts: ArtifactPaths {
                run_log: "run_log.jsonl".into(),
                final_checkpoint: "final.ckpt".into(),
                pool_dump: None,
            },
            wall_clock_start_unix_secs: 1,
            seed: 7,
        };
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.config, m.config);
        assert_eq!(back.corpus_checksums, m.corpus_checksums);
    }
}
