//! Synthetic sequence-recognition corpora with a controllable difficulty
//! split, persisted in a language-neutral on-disk layout.
//!
//! Each token id owns a prototype vector on the unit sphere in feature
//! space. An utterance is a random token string rendered as
//! duration-many noisy copies of each token's prototype. The hard stratum
//! uses prototypes displaced along a fixed direction (a domain shift) and a
//! larger noise level, so pseudo-labels on hard utterances are genuinely
//! less reliable.
//!
//! Layout under the corpus directory:
//!
//! * `spec.json`: the generating spec
//! * `<split>.jsonl`: manifest per split (`labeled`, `unlabeled`, `dev`,
//!   `test`): `{utt_id, file, offset, n_frames, transcript, stratum}`
//! * `features_<split>.bin`: packed records: `{T: u32, D: u32}` little
//!   endian, then `T * D` little-endian `f32`, row-major
//! * `oracle_transcripts.jsonl`: hidden truth for unlabeled utterances
//! * `checksums.json`: SHA-256 of every file above

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use cpl_core::ctc::TokenSeq;
use cpl_core::FeatureMatrix;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;

/// Minimum pairwise Euclidean distance between prototype vectors.
pub const PROTO_MIN_DIST: f64 = 0.7;
const PROTO_MAX_ATTEMPTS: usize = 100_000;

/// Errors surfaced by corpus generation and loading.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {field}: {msg}")]
    InvalidSpec { field: &'static str, msg: String },
    #[error("could not place {placed} prototypes after {attempts} rejection attempts")]
    PrototypeRejectionExceeded { placed: usize, attempts: usize },
    #[error("corrupt manifest {file}: {msg}")]
    CorruptManifest { file: String, msg: String },
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generation parameters for one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Non-blank token count.
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Inclusive range of transcript lengths.
    pub tokens_per_utt: [usize; 2],
    /// Inclusive range of frames a single token occupies.
    pub frames_per_token: [usize; 2],
    /// Frame noise sigma for the easy stratum.
    pub noise_easy: f64,
    /// Frame noise sigma for the hard stratum; must exceed `noise_easy`.
    pub noise_hard: f64,
    /// Fraction of hard utterances in the unlabeled, dev, and test splits.
    /// The labeled split is always easy (clean seed data).
    pub hard_fraction: f64,
    /// Magnitude of the hard-stratum prototype displacement.
    pub shift_strength: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            feature_dim: 16,
            tokens_per_utt: [3, 10],
            frames_per_token: [2, 5],
            noise_easy: 0.15,
            noise_hard: 0.7,
            hard_fraction: 0.5,
            shift_strength: 0.5,
            n_labeled: 200,
            n_unlabeled: 4000,
            n_dev: 500,
            n_test: 500,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |field: &'static str, msg: String| Err(CorpusError::InvalidSpec { field, msg });
        if self.vocab_size < 2 {
            return fail("vocab_size", "need at least 2 tokens".into());
        }
        if self.feature_dim < 2 {
            return fail("feature_dim", "need at least 2 dimensions".into());
        }
        if self.tokens_per_utt[0] < 1 || self.tokens_per_utt[0] > self.tokens_per_utt[1] {
            return fail("tokens_per_utt", format!("bad range {:?}", self.tokens_per_utt));
        }
        if self.frames_per_token[0] < 1 || self.frames_per_token[0] > self.frames_per_token[1] {
            return fail("frames_per_token", format!("bad range {:?}", self.frames_per_token));
        }
        if !(self.noise_easy >= 0.0 && self.noise_hard > self.noise_easy) {
            return fail(
                "noise_hard",
                format!("need 0 <= noise_easy < noise_hard, got {} / {}", self.noise_easy, self.noise_hard),
            );
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return fail("hard_fraction", format!("{} outside [0, 1]", self.hard_fraction));
        }
        if self.shift_strength < 0.0 {
            return fail("shift_strength", "must be non-negative".into());
        }
        for (field, n) in [
            ("n_labeled", self.n_labeled),
            ("n_unlabeled", self.n_unlabeled),
            ("n_dev", self.n_dev),
            ("n_test", self.n_test),
        ] {
            if n < 1 {
                return fail(field, "count must be at least 1".into());
            }
        }
        Ok(())
    }
}

/// Difficulty stratum of an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    Easy,
    Hard,
}

/// One loaded utterance. `transcript` is `None` on the unlabeled view; the
/// hidden truth is only reachable through [`Corpus::oracle_transcript`].
#[derive(Clone, Debug)]
pub struct Utterance {
    pub utt_id: u32,
    pub features: FeatureMatrix,
    pub transcript: Option<TokenSeq>,
    pub stratum: Stratum,
}

/// The four corpus splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Labeled, Split::Unlabeled, Split::Dev, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    utt_id: u32,
    file: String,
    offset: u64,
    n_frames: u32,
    transcript: Option<Vec<u32>>,
    stratum: Stratum,
}

#[derive(Serialize, Deserialize)]
struct OracleRow {
    utt_id: u32,
    transcript: Vec<u32>,
}

/// Easy and hard prototype banks plus the shared shift direction,
/// reproducible from the spec alone.
pub struct Prototypes {
    pub easy: Vec<Vec<f64>>,
    pub hard: Vec<Vec<f64>>,
    pub shift_dir: Vec<f64>,
}

fn unit_gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draws the prototype banks for `spec`; deterministic in `spec.seed`.
pub fn prototypes(spec: &CorpusSpec) -> Result<Prototypes, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, "prototypes", 0));
    let mut easy: Vec<Vec<f64>> = Vec::with_capacity(spec.vocab_size);
    let mut attempts = 0;
    while easy.len() < spec.vocab_size {
        if attempts >= PROTO_MAX_ATTEMPTS {
            return Err(CorpusError::PrototypeRejectionExceeded {
                placed: easy.len(),
                attempts,
            });
        }
        attempts += 1;
        let cand = unit_gaussian_vector(&mut rng, spec.feature_dim);
        if easy.iter().all(|p| dist(p, &cand) >= PROTO_MIN_DIST) {
            easy.push(cand);
        }
    }
    let shift_dir = unit_gaussian_vector(&mut rng, spec.feature_dim);
    // Hard prototypes: displace along the shared direction, back to the
    // sphere. One global direction models a domain shift, not new classes.
    let hard = easy
        .iter()
        .map(|p| {
            let shifted: Vec<f64> = p
                .iter()
                .zip(&shift_dir)
                .map(|(a, d)| a + spec.shift_strength * d)
                .collect();
            let norm = shifted.iter().map(|x| x * x).sum::<f64>().sqrt();
            shifted.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Ok(Prototypes { easy, hard, shift_dir })
}

/// Renders utterance `utt_id`; deterministic in `(spec.seed, utt_id)` so
/// generation order (or parallelism) cannot change the output.
pub fn render_utterance(
    spec: &CorpusSpec,
    protos: &Prototypes,
    utt_id: u32,
    force_easy: bool,
) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ utt_id as u64);
    let stratum = if !force_easy && rng.random::<f64>() < spec.hard_fraction {
        Stratum::Hard
    } else {
        Stratum::Easy
    };
    let (bank, sigma) = match stratum {
        Stratum::Easy => (&protos.easy, spec.noise_easy),
        Stratum::Hard => (&protos.hard, spec.noise_hard),
    };
    let len = rng.random_range(spec.tokens_per_utt[0]..=spec.tokens_per_utt[1]);
    let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(1..=spec.vocab_size as u32)).collect();
    let durations: Vec<usize> = (0..len)
        .map(|_| rng.random_range(spec.frames_per_token[0]..=spec.frames_per_token[1]))
        .collect();
    let total_frames: usize = durations.iter().sum();
    let mut feats = FeatureMatrix::zeros(total_frames, spec.feature_dim);
    let mut t = 0;
    for (&tok, &dur) in tokens.iter().zip(&durations) {
        let proto = &bank[(tok - 1) as usize];
        for _ in 0..dur {
            let frame = feats.frame_mut(t);
            for (o, &p) in frame.iter_mut().zip(proto) {
                let noise: f64 = rng.sample(StandardNormal);
                *o = (p + sigma * noise) as f32;
            }
            t += 1;
        }
    }
    Utterance {
        utt_id,
        features: feats,
        transcript: Some(TokenSeq::new(tokens)),
        stratum,
    }
}

fn split_ranges(spec: &CorpusSpec) -> [(Split, u32, u32); 4] {
    let a = spec.n_labeled as u32;
    let b = a + spec.n_unlabeled as u32;
    let c = b + spec.n_dev as u32;
    let d = c + spec.n_test as u32;
    [
        (Split::Labeled, 0, a),
        (Split::Unlabeled, a, b),
        (Split::Dev, b, c),
        (Split::Test, c, d),
    ]
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)
            .map_err(|e| CorpusError::CorruptManifest { file: display(path), msg: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn display(path: &Path) -> String {
    path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sha256_hex(path: &Path) -> Result<String, CorpusError> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>())
}

/// Generates a corpus under `dir`. Overwrites existing files.
pub fn generate(spec: &CorpusSpec, dir: &Path) -> Result<(), CorpusError> {
    spec.validate()?;
    let protos = prototypes(spec)?;
    fs::create_dir_all(dir)?;

    let mut written: Vec<String> = Vec::new();
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(spec).expect("spec serializes") + "\n")?;
    written.push(display(&spec_path));

    let mut oracle_rows: Vec<OracleRow> = Vec::new();
    for (split, lo, hi) in split_ranges(spec) {
        let bin_name = format!("features_{}.bin", split.name());
        let bin_path = dir.join(&bin_name);
        let mut bin = BufWriter::new(fs::File::create(&bin_path)?);
        let mut offset = 0u64;
        let mut rows: Vec<ManifestRow> = Vec::new();
        for utt_id in lo..hi {
            let utt = render_utterance(spec, &protos, utt_id, split == Split::Labeled);
            let frames = utt.features.frames() as u32;
            bin.write_all(&frames.to_le_bytes())?;
            bin.write_all(&(spec.feature_dim as u32).to_le_bytes())?;
            for &v in utt.features.data() {
                bin.write_all(&v.to_le_bytes())?;
            }
            let transcript = utt.transcript.expect("rendered utterances carry truth");
            if split == Split::Unlabeled {
                oracle_rows.push(OracleRow {
                    utt_id,
                    transcript: transcript.tokens().to_vec(),
                });
            }
            rows.push(ManifestRow {
                utt_id,
                file: bin_name.clone(),
                offset,
                n_frames: frames,
                transcript: if split == Split::Unlabeled {
                    None
                } else {
                    Some(transcript.tokens().to_vec())
                },
                stratum: utt.stratum,
            });
            offset += 8 + (utt.features.data().len() * 4) as u64;
        }
        bin.flush()?;
        written.push(bin_name);
        let manifest_path = dir.join(format!("{}.jsonl", split.name()));
        write_jsonl(&manifest_path, &rows)?;
        written.push(display(&manifest_path));
    }

    let oracle_path = dir.join("oracle_transcripts.jsonl");
    write_jsonl(&oracle_path, &oracle_rows)?;
    written.push(display(&oracle_path));

    let mut checksums: Vec<(String, String)> = Vec::new();
    for name in &written {
        checksums.push((name.clone(), sha256_hex(&dir.join(name))?));
    }
    let map: serde_json::Map<String, serde_json::Value> = checksums
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    fs::write(
        dir.join("checksums.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializes") + "\n",
    )?;
    Ok(())
}

/// A fully loaded corpus. Unlabeled transcripts are reachable only through
/// [`Corpus::oracle_transcript`].
#[derive(Debug)]
pub struct Corpus {
    spec: CorpusSpec,
    labeled: Vec<Utterance>,
    unlabeled: Vec<Utterance>,
    dev: Vec<Utterance>,
    test: Vec<Utterance>,
    oracle: HashMap<u32, TokenSeq>,
}

impl Corpus {
    /// Loads and checksum-verifies a generated corpus directory.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        verify_checksums(dir)?;
        let spec_text = fs::read_to_string(dir.join("spec.json"))?;
        let spec: CorpusSpec = serde_json::from_str(&spec_text).map_err(|e| {
            CorpusError::CorruptManifest { file: "spec.json".into(), msg: e.to_string() }
        })?;
        let mut splits: Vec<Vec<Utterance>> = Vec::with_capacity(4);
        for split in Split::ALL {
            splits.push(load_split(dir, split, &spec)?);
        }
        let test = splits.pop().expect("four splits");
        let dev = splits.pop().expect("four splits");
        let unlabeled = splits.pop().expect("four splits");
        let labeled = splits.pop().expect("four splits");
        let oracle = load_oracle(dir)?;
        Ok(Self { spec, labeled, unlabeled, dev, test, oracle })
    }

    pub fn spec(&self) -> &CorpusSpec {
        &self.spec
    }

    pub fn labeled(&self) -> &[Utterance] {
        &self.labeled
    }

    /// Unlabeled view: `transcript` is `None` on every entry.
    pub fn unlabeled(&self) -> &[Utterance] {
        &self.unlabeled
    }

    pub fn dev(&self) -> &[Utterance] {
        &self.dev
    }

    pub fn test(&self) -> &[Utterance] {
        &self.test
    }

    /// Hidden ground truth for an unlabeled utterance; the only path to it.
    pub fn oracle_transcript(&self, utt_id: u32) -> Option<&TokenSeq> {
        self.oracle.get(&utt_id)
    }
}

/// The recorded file checksums, in stable (sorted) order.
pub fn read_checksums(dir: &Path) -> Result<std::collections::BTreeMap<String, String>, CorpusError> {
    let text = fs::read_to_string(dir.join("checksums.json"))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::CorruptManifest {
        file: "checksums.json".into(),
        msg: e.to_string(),
    })
}

fn verify_checksums(dir: &Path) -> Result<(), CorpusError> {
    for (file, expected) in &read_checksums(dir)? {
        let actual = sha256_hex(&dir.join(file))?;
        if &actual != expected {
            return Err(CorpusError::ChecksumMismatch { file: file.clone() });
        }
    }
    Ok(())
}

fn load_split(dir: &Path, split: Split, spec: &CorpusSpec) -> Result<Vec<Utterance>, CorpusError> {
    let manifest_name = format!("{}.jsonl", split.name());
    let reader = BufReader::new(fs::File::open(dir.join(&manifest_name))?);
    let mut out = Vec::new();
    let mut blobs: HashMap<String, fs::File> = HashMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| {
            CorpusError::CorruptManifest {
                file: manifest_name.clone(),
                msg: format!("line {}: {}", line_no + 1, e),
            }
        })?;
        let blob = match blobs.entry(row.file.clone()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(fs::File::open(dir.join(&row.file))?)
            }
        };
        let features = read_feature_record(blob, row.offset, &manifest_name)?;
        if features.frames() != row.n_frames as usize || features.dim() != spec.feature_dim {
            return Err(CorpusError::CorruptManifest {
                file: manifest_name.clone(),
                msg: format!(
                    "utt {}: blob shape {}x{} does not match manifest ({} frames, dim {})",
                    row.utt_id,
                    features.frames(),
                    features.dim(),
                    row.n_frames,
                    spec.feature_dim
                ),
            });
        }
        let transcript = match row.transcript {
            Some(ids) => Some(TokenSeq::try_new(ids).map_err(|e| CorpusError::CorruptManifest {
                file: manifest_name.clone(),
                msg: format!("utt {}: {}", row.utt_id, e),
            })?),
            None => None,
        };
        out.push(Utterance { utt_id: row.utt_id, features, transcript, stratum: row.stratum });
    }
    Ok(out)
}

fn read_feature_record(
    blob: &mut fs::File,
    offset: u64,
    manifest: &str,
) -> Result<FeatureMatrix, CorpusError> {
    blob.seek(SeekFrom::Start(offset))?;
    let mut header = [0u8; 8];
    blob.read_exact(&mut header)?;
    let frames = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    if frames.checked_mul(dim).is_none_or(|n| n > 100_000_000) {
        return Err(CorpusError::CorruptManifest {
            file: manifest.to_string(),
            msg: format!("implausible record shape {frames}x{dim} at offset {offset}"),
        });
    }
    let mut bytes = vec![0u8; frames * dim * 4];
    blob.read_exact(&mut bytes)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureMatrix::from_data(frames, dim, data))
}

fn load_oracle(dir: &Path) -> Result<HashMap<u32, TokenSeq>, CorpusError> {
    let name = "oracle_transcripts.jsonl";
    let reader = BufReader::new(fs::File::open(dir.join(name))?);
    let mut map = HashMap::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: OracleRow = serde_json::from_str(&line).map_err(|e| {
            CorpusError::CorruptManifest {
                file: name.into(),
                msg: format!("line {}: {}", line_no + 1, e),
            }
        })?;
        let seq = TokenSeq::try_new(row.transcript).map_err(|e| CorpusError::CorruptManifest {
            file: name.into(),
            msg: format!("utt {}: {}", row.utt_id, e),
        })?;
        map.insert(row.utt_id, seq);
    }
    Ok(map)
}
