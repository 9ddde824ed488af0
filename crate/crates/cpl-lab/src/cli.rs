//! Command-line surface.
//!
//! Exit codes: 0 on success, 1 on validation problems (bad flags, bad
//! config, bad spec), 2 on runtime failures (IO, checksum mismatches,
//! diverged training). Progress goes to standard error; machine-readable
//! records go to files under `--out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use cpl_core::model::ParamSet;
use cpl_core::pool::SelectionMode;

use crate::ablate::{run_ablation_grid, AblationAxes};
use crate::checkpoint::Checkpoint;
use crate::config::{self, TrainConfig};
use crate::corpus::{self, Corpus, CorpusError, CorpusSpec};
use crate::runlog::{read_pool_dump, ArtifactPaths, RunManifest, RunPaths};
use crate::trainer::{self, run_training, TrainError, TrainOptions};

/// Exit status with the classification the shell contract wants.
enum CliError {
    /// Bad input: flags, config, or spec. Exit 1.
    Validation(String),
    /// The task itself failed. Exit 2.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(inner) => CliError::Validation(inner.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<crate::checkpoint::CheckpointError> for CliError {
    fn from(e: crate::checkpoint::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::runlog::RunLogError> for CliError {
    fn from(e: crate::runlog::RunLogError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "cpl",
    about = "Desk-scale lab for curriculum pseudo-labeling: synthetic corpora, \
             semi-supervised CTC training, ablations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus under --out.
    GenData {
        /// Corpus spec JSON file; built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Dotted-path overrides on the spec, e.g. --set noise_hard=0.8.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run supervised warmup plus semi-supervised training.
    Train {
        /// Training config JSON file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted-path overrides, e.g. --set curriculum.K=5.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Run directory for all artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Also dump every pool refill to pool_dump.jsonl.
        #[arg(long)]
        dump_pool: bool,
        /// Skip per-evaluation checkpoints (the final one is always written).
        #[arg(long)]
        no_eval_checkpoints: bool,
        /// Print the resolved config as JSON to stdout and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Evaluate a checkpoint on a corpus split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// One of: labeled, dev, test.
        #[arg(long, default_value = "dev")]
        split: String,
        /// Evaluate the EMA teacher weights instead of the student.
        #[arg(long)]
        ema: bool,
    },
    /// Run a grid of training runs and tabulate the medians.
    Ablate {
        /// Base config JSON file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted-path overrides applied to the base config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Selection modes, comma separated: curriculum-cs, curriculum-crs,
        /// full-pool, oracle, threshold(0.95).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        /// Pool sizes in batches, comma separated.
        #[arg(long, value_delimiter = ',')]
        pools: Vec<usize>,
        /// Curriculum stage counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<usize>,
        /// Replicate seeds shared by every cell, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Summarize a run's pool dump (requires train --dump-pool).
    InspectPool {
        /// Run directory containing pool_dump.jsonl.
        #[arg(long)]
        run: PathBuf,
        /// Show the ranked entries of one refill instead of the summary.
        #[arg(long)]
        refill: Option<u32>,
        /// Entries to show with --refill.
        #[arg(long, default_value_t = 16)]
        top: usize,
    },
}

/// Parses argv and runs; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outputs, not errors.
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { spec, set, seed, out } => gen_data(spec, &set, seed, &out),
        Command::Train { config, set, seed, data, out, dump_pool, no_eval_checkpoints, dump_config } => {
            train(config, &set, seed, &data, &out, dump_pool, no_eval_checkpoints, dump_config)
        }
        Command::Eval { checkpoint, data, split, ema } => eval(&checkpoint, &data, &split, ema),
        Command::Ablate { config, set, data, out, modes, pools, stages, seeds } => {
            ablate(config, &set, &data, &out, &modes, &pools, &stages, &seeds)
        }
        Command::InspectPool { run, refill, top } => inspect_pool(&run, refill, top),
    }
}

fn load_train_config(
    config: &Option<PathBuf>,
    set: &[String],
    seed: Option<u64>,
) -> Result<TrainConfig, CliError> {
    let base = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            config::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    let mut cfg = config::apply_overrides(&base, set)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(
    spec_path: Option<PathBuf>,
    set: &[String],
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let base = match &spec_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<CorpusSpec>(&text)
                .map_err(|e| CliError::Validation(format!("corpus spec: {e}")))?
        }
        None => CorpusSpec::default(),
    };
    let mut spec = config::apply_json_overrides(&base, set)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    corpus::generate(&spec, out)?;
    eprintln!(
        "gen-data: wrote {} labeled / {} unlabeled / {} dev / {} test utterances to {}",
        spec.n_labeled,
        spec.n_unlabeled,
        spec.n_dev,
        spec.n_test,
        out.display()
    );
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_manifest(
    cfg: &TrainConfig,
    config_path: &Option<PathBuf>,
    data: &Path,
    paths: &RunPaths,
    dump_pool: bool,
) -> Result<(), CliError> {
    let checksums: BTreeMap<String, String> = corpus::read_checksums(data)?;
    let manifest = RunManifest {
        config_path: config_path.as_ref().map(|p| p.display().to_string()),
        config: cfg.clone(),
        corpus_dir: data.display().to_string(),
        corpus_checksums: checksums,
        artifacts: ArtifactPaths {
            run_log: "run_log.jsonl".into(),
            final_checkpoint: "final.ckpt".into(),
            pool_dump: dump_pool.then(|| "pool_dump.jsonl".into()),
        },
        wall_clock_start_unix_secs: unix_now(),
        seed: cfg.seed,
    };
    manifest.save(&paths.manifest())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config_path: Option<PathBuf>,
    set: &[String],
    seed: Option<u64>,
    data: &Path,
    out: &Path,
    dump_pool: bool,
    no_eval_checkpoints: bool,
    dump_config: bool,
) -> Result<(), CliError> {
    let cfg = load_train_config(&config_path, set, seed)?;
    if dump_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let corpus = Corpus::load(data)?;
    let paths = RunPaths::new(out);
    fs::create_dir_all(out)?;
    write_manifest(&cfg, &config_path, data, &paths, dump_pool)?;
    let opts = TrainOptions {
        checkpoint_at_evals: !no_eval_checkpoints,
        dump_pool,
        progress: true,
    };
    let outcome = run_training(&corpus, &cfg, &paths, opts)?;
    eprintln!(
        "train: done; warmup dev TER {:.4}, final dev TER {:.4} (ema {:.4}), \
         final test TER {:.4}; artifacts in {}",
        outcome.warmup_dev_ter,
        outcome.final_dev_ter,
        outcome.final_dev_ter_ema,
        outcome.final_test_ter,
        out.display()
    );
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, split: &str, ema: bool) -> Result<(), CliError> {
    let corpus = Corpus::load(data)?;
    let utts = match split {
        "labeled" => corpus.labeled(),
        "dev" => corpus.dev(),
        "test" => corpus.test(),
        other => {
            return Err(CliError::Validation(format!(
                "unknown split `{other}` (expected labeled, dev, or test)"
            )))
        }
    };
    let ck = Checkpoint::load(checkpoint)?;
    let values = if ema { ck.ema.clone() } else { ck.params.clone() };
    let params = ParamSet::from_values(ck.dims, values)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let ter = trainer::evaluate(&params, utts)?;
    let which = if ema { "teacher" } else { "student" };
    println!("{split} TER {ter:.6} ({which}, iteration {})", ck.iter);
    Ok(())
}

fn parse_mode(text: &str) -> Result<SelectionMode, CliError> {
    let mode: SelectionMode = text
        .parse()
        .map_err(|e: cpl_core::pool::ParseModeError| CliError::Validation(e.to_string()))?;
    if let SelectionMode::Threshold(tau) = mode {
        if !(0.0..=1.0).contains(&tau) {
            return Err(CliError::Validation(format!("threshold {tau} outside [0, 1]")));
        }
    }
    Ok(mode)
}

#[allow(clippy::too_many_arguments)]
fn ablate(
    config_path: Option<PathBuf>,
    set: &[String],
    data: &Path,
    out: &Path,
    modes: &[String],
    pools: &[usize],
    stages: &[usize],
    seeds: &[u64],
) -> Result<(), CliError> {
    let cfg = load_train_config(&config_path, set, None)?;
    let corpus = Corpus::load(data)?;
    let mut axes = AblationAxes::single(&cfg);
    if !modes.is_empty() {
        axes.selection_modes = modes.iter().map(|m| parse_mode(m)).collect::<Result<_, _>>()?;
    }
    if !pools.is_empty() {
        axes.pool_batches = pools.to_vec();
    }
    if !stages.is_empty() {
        axes.stage_counts = stages.to_vec();
    }
    if !seeds.is_empty() {
        axes.seeds = seeds.to_vec();
    }
    let report = run_ablation_grid(&corpus, &cfg, &axes, out)?;
    eprint!("{}", crate::ablate::render_table(&report));
    eprintln!("ablate: wrote ablation.json and ablation.txt to {}", out.display());
    Ok(())
}

fn inspect_pool(run: &Path, refill: Option<u32>, top: usize) -> Result<(), CliError> {
    let path = run.join("pool_dump.jsonl");
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "{} not found; rerun training with --dump-pool",
            path.display()
        )));
    }
    let rows = read_pool_dump(&path)?;
    if rows.is_empty() {
        println!("pool dump is empty");
        return Ok(());
    }
    match refill {
        Some(r) => {
            let picked: Vec<_> = rows.iter().filter(|row| row.refill == r).collect();
            if picked.is_empty() {
                return Err(CliError::Validation(format!("no rows for refill {r}")));
            }
            println!("refill {r}: {} entries, {} selected", picked.len(),
                picked.iter().filter(|e| e.selected).count());
            println!("{:>8}  {:>10}  {:>6}  {:>10}  selected", "utt_id", "score", "|pl|", "true_err");
            for row in picked.iter().take(top) {
                let score = row
                    .score
                    .map(|s| format!("{s:>10.4}"))
                    .unwrap_or_else(|| format!("{:>10}", "-inf"));
                println!(
                    "{:>8}  {score}  {:>6}  {:>10.4}  {}",
                    row.utt_id, row.pl_length, row.true_error, row.selected
                );
            }
        }
        None => {
            let last = rows.last().expect("non-empty").refill;
            println!("{} refills, {} rows total", last + 1, rows.len());
            println!(
                "{:>7}  {:>7}  {:>9}  {:>11}  {:>10}",
                "refill", "drawn", "selected", "mean_score", "mean_err"
            );
            for r in 0..=last {
                let group: Vec<_> = rows.iter().filter(|row| row.refill == r).collect();
                if group.is_empty() {
                    continue;
                }
                let sel: Vec<_> = group.iter().filter(|e| e.selected).collect();
                let scores: Vec<f64> = sel.iter().filter_map(|e| e.score).collect();
                let mean_score = if scores.is_empty() {
                    f64::NAN
                } else {
                    scores.iter().sum::<f64>() / scores.len() as f64
                };
                let mean_err = if sel.is_empty() {
                    f64::NAN
                } else {
                    sel.iter().map(|e| e.true_error).sum::<f64>() / sel.len() as f64
                };
                println!(
                    "{r:>7}  {:>7}  {:>9}  {mean_score:>11.4}  {mean_err:>10.4}",
                    group.len(),
                    sel.len()
                );
            }
        }
    }
    Ok(())
}
