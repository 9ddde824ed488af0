//! Ablation grids: run every combination of selection mode, pool size, and
//! stage count across a shared set of seeds, then tabulate the medians.
//!
//! Seeds are replicates, not a grid axis: every cell runs the same seeds, so
//! cells are comparable and their warmup phases are byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use cpl_core::pool::SelectionMode;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::runlog::RunPaths;
use crate::trainer::{run_training, TrainError, TrainOptions};

/// Grid axes. The table has one row per (mode, pool size, stage count).
#[derive(Clone, Debug)]
pub struct AblationAxes {
    pub selection_modes: Vec<SelectionMode>,
    pub pool_batches: Vec<usize>,
    pub stage_counts: Vec<usize>,
    /// Replicate seeds shared by every cell.
    pub seeds: Vec<u64>,
}

impl AblationAxes {
    /// Degenerate grid: the base config's own axes, a single seed.
    pub fn single(cfg: &TrainConfig) -> Self {
        Self {
            selection_modes: vec![cfg.selection_mode],
            pool_batches: vec![cfg.pool_batches],
            stage_counts: vec![cfg.curriculum.num_stages],
            seeds: vec![cfg.seed],
        }
    }

    pub fn cell_count(&self) -> usize {
        self.selection_modes.len() * self.pool_batches.len() * self.stage_counts.len()
    }
}

/// One run's summary inside a cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub warmup_dev_ter: f64,
    pub final_dev_ter: f64,
    pub final_dev_ter_ema: f64,
    pub final_test_ter: f64,
    pub final_test_ter_ema: f64,
}

/// One grid cell: a (mode, pool size, stage count) combination with the
/// per-seed outcomes and their medians.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellRow {
    pub selection_mode: SelectionMode,
    pub pool_batches: usize,
    pub stages: usize,
    pub per_seed: Vec<SeedOutcome>,
    pub median_warmup_dev_ter: f64,
    pub median_final_dev_ter: f64,
    pub median_final_test_ter: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<CellRow>,
}

/// Median of a non-empty slice; the mean of the middle pair at even length.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn dir_slug(mode: SelectionMode, pool_batches: usize, stages: usize) -> String {
    let mode_part: String = mode
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{mode_part}_C{pool_batches}_K{stages}")
}

/// Runs the whole grid, writes `ablation.json` and `ablation.txt` under
/// `out_dir`, and returns the report. Every run's artifacts live under
/// `out_dir/<cell>/seed_<seed>/`.
pub fn run_ablation_grid(
    corpus: &Corpus,
    base: &TrainConfig,
    axes: &AblationAxes,
    out_dir: &Path,
) -> Result<AblationReport, TrainError> {
    assert!(
        !axes.selection_modes.is_empty()
            && !axes.pool_batches.is_empty()
            && !axes.stage_counts.is_empty()
            && !axes.seeds.is_empty(),
        "every ablation axis needs at least one value"
    );
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(axes.cell_count());
    for &mode in &axes.selection_modes {
        for &pool_batches in &axes.pool_batches {
            for &stages in &axes.stage_counts {
                let mut per_seed = Vec::with_capacity(axes.seeds.len());
                for &seed in &axes.seeds {
                    let mut cfg = base.clone();
                    cfg.selection_mode = mode;
                    cfg.pool_batches = pool_batches;
                    cfg.curriculum.num_stages = stages;
                    cfg.seed = seed;
                    cfg.validate()?;
                    let run_dir = out_dir
                        .join(dir_slug(mode, pool_batches, stages))
                        .join(format!("seed_{seed}"));
                    let paths = RunPaths::new(&run_dir);
                    let opts =
                        TrainOptions { checkpoint_at_evals: false, dump_pool: false, progress: false };
                    let outcome = run_training(corpus, &cfg, &paths, opts)?;
                    eprintln!(
                        "ablate: {mode} C={pool_batches} K={stages} seed={seed} \
                         dev {:.4} test {:.4}",
                        outcome.final_dev_ter, outcome.final_test_ter
                    );
                    per_seed.push(SeedOutcome {
                        seed,
                        warmup_dev_ter: outcome.warmup_dev_ter,
                        final_dev_ter: outcome.final_dev_ter,
                        final_dev_ter_ema: outcome.final_dev_ter_ema,
                        final_test_ter: outcome.final_test_ter,
                        final_test_ter_ema: outcome.final_test_ter_ema,
                    });
                }
                let devs: Vec<f64> = per_seed.iter().map(|s| s.final_dev_ter).collect();
                let tests: Vec<f64> = per_seed.iter().map(|s| s.final_test_ter).collect();
                let warms: Vec<f64> = per_seed.iter().map(|s| s.warmup_dev_ter).collect();
                rows.push(CellRow {
                    selection_mode: mode,
                    pool_batches,
                    stages,
                    per_seed,
                    median_warmup_dev_ter: median(&warms),
                    median_final_dev_ter: median(&devs),
                    median_final_test_ter: median(&tests),
                });
            }
        }
    }
    let report = AblationReport { rows };
    let json = serde_json::to_string_pretty(&report)
        .expect("report serializes") + "\n";
    fs::write(out_dir.join("ablation.json"), json)?;
    let mut txt = fs::File::create(out_dir.join("ablation.txt"))?;
    txt.write_all(render_table(&report).as_bytes())?;
    Ok(report)
}

/// Renders the report as an aligned plain-text table.
pub fn render_table(report: &AblationReport) -> String {
    let headers = ["mode", "C", "K", "warmup dev", "final dev", "final test", "seeds"];
    let mut cells: Vec<[String; 7]> = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        cells.push([
            row.selection_mode.to_string(),
            row.pool_batches.to_string(),
            row.stages.to_string(),
            format!("{:.4}", row.median_warmup_dev_ter),
            format!("{:.4}", row.median_final_dev_ter),
            format!("{:.4}", row.median_final_test_ter),
            row.per_seed.len().to_string(),
        ]);
    }
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let render_line = |fields: &[String]| -> String {
        fields
            .iter()
            .zip(&widths)
            .map(|(f, &w)| format!("{f:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&render_line(&headers.map(String::from)));
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in &cells {
        out.push_str(&render_line(row.as_slice()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn slugs_are_path_safe() {
        let s = dir_slug(SelectionMode::Threshold(0.95), 10, 5);
        assert_eq!(s, "threshold_0.95__C10_K5");
        assert!(!s.contains('('));
    }

    #[test]
    fn table_rows_match_report_rows() {
        let report = AblationReport {
            rows: vec![CellRow {
                selection_mode: SelectionMode::CurriculumCs,
                pool_batches: 10,
                stages: 5,
                per_seed: vec![],
                median_warmup_dev_ter: 0.5,
                median_final_dev_ter: 0.25,
                median_final_test_ter: 0.26,
            }],
        };
        let text = render_table(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + report.rows.len());
        assert!(lines[0].starts_with("mode"));
        assert!(lines[2].contains("curriculum-cs"));
        assert!(lines[2].contains("0.2500"));
    }
}
