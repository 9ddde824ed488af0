//! Byte-exact binary checkpoints for training state.
//!
//! A checkpoint captures everything needed to resume or inspect a run:
//! student parameters, EMA teacher parameters, Adam moments, and the
//! iteration counters. The format is fixed little-endian so identical state
//! always produces identical bytes, which makes determinism checks a file
//! comparison.
//!
//! Layout: magic `b"CPLCKPT\0"`, version `u32`, dims (`window`, `feat_dim`,
//! `hidden`, `vocab` as `u32`), `iter: u64`, `adam_step: u64`,
//! `param_count: u64`, then four `f64` arrays of that length: params, ema,
//! adam_m, adam_v.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use cpl_core::model::ModelDims;
use thiserror::Error;

const MAGIC: [u8; 8] = *b"CPLCKPT\0";
const VERSION: u32 = 1;

/// Errors surfaced by checkpoint IO.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated or its lengths disagree: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Complete training state at one point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    /// Completed optimizer steps, warmup included.
    pub iter: u64,
    pub adam_step: u64,
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    /// Writes atomically: a temp file in the same directory is renamed over
    /// `path`, so readers never observe a half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let n = self.dims.param_count();
        for (name, arr) in [
            ("params", &self.params),
            ("ema", &self.ema),
            ("adam_m", &self.adam_m),
            ("adam_v", &self.adam_v),
        ] {
            if arr.len() != n {
                return Err(CheckpointError::Malformed(format!(
                    "{name} has {} values, dims require {n}",
                    arr.len()
                )));
            }
        }
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            w.write_all(&MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            for v in [self.dims.window, self.dims.feat_dim, self.dims.hidden, self.dims.vocab] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
            w.write_all(&self.iter.to_le_bytes())?;
            w.write_all(&self.adam_step.to_le_bytes())?;
            w.write_all(&(n as u64).to_le_bytes())?;
            for arr in [&self.params, &self.ema, &self.adam_m, &self.adam_v] {
                for &x in arr.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut f = fs::File::open(path)?;
        let mut magic = [0u8; 8];
        read_exact(&mut f, &mut magic)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut f)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let window = read_u32(&mut f)? as usize;
        let feat_dim = read_u32(&mut f)? as usize;
        let hidden = read_u32(&mut f)? as usize;
        let vocab = read_u32(&mut f)? as usize;
        if window == 0 && feat_dim == 0 {
            return Err(CheckpointError::Malformed("zero dims".into()));
        }
        let dims = ModelDims::new(window, feat_dim, hidden, vocab);
        let iter = read_u64(&mut f)?;
        let adam_step = read_u64(&mut f)?;
        let n = read_u64(&mut f)? as usize;
        if n != dims.param_count() {
            return Err(CheckpointError::Malformed(format!(
                "stored length {n} disagrees with dims ({})",
                dims.param_count()
            )));
        }
        let params = read_f64_array(&mut f, n)?;
        let ema = read_f64_array(&mut f, n)?;
        let adam_m = read_f64_array(&mut f, n)?;
        let adam_v = read_f64_array(&mut f, n)?;
        let mut trailing = [0u8; 1];
        if f.read(&mut trailing)? != 0 {
            return Err(CheckpointError::Malformed("trailing bytes after arrays".into()));
        }
        Ok(Self { dims, iter, adam_step, params, ema, adam_m, adam_v })
    }
}

fn read_exact(f: &mut fs::File, buf: &mut [u8]) -> Result<(), CheckpointError> {
    f.read_exact(buf)
        .map_err(|_| CheckpointError::Malformed("unexpected end of file".into()))
}

fn read_u32(f: &mut fs::File) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(f, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut fs::File) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(f, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64_array(f: &mut fs::File, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(f, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let dims = ModelDims::new(1, 2, 3, 2);
        let n = dims.param_count();
        Checkpoint {
            dims,
            iter: 42,
            adam_step: 40,
            params: (0..n).map(|i| i as f64 * 0.25).collect(),
            ema: (0..n).map(|i| -(i as f64)).collect(),
            adam_m: vec![0.125; n],
            adam_v: vec![1e-9; n],
        }
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn identical_state_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let ck = sample();
        ck.save(&a).unwrap();
        ck.save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        sample().save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn wrong_array_length_fails_on_save() {
        let mut ck = sample();
        ck.ema.pop();
        let dir = tempfile::tempdir().unwrap();
        let err = ck.save(&dir.path().join("x.ckpt"));
        assert!(matches!(err, Err(CheckpointError::Malformed(_))));
    }
}
