//! Training configuration: JSON schema, defaults, validation, and
//! dotted-path overrides.
//!
//! Defaults are calibrated for the bundled synthetic corpus so a full run
//! finishes in seconds on one CPU core. Each field's doc comment records the
//! corresponding full-scale speech value for orientation; those values are
//! far too expensive for this lab and are not the defaults.

use cpl_core::augment::MaskPolicy;
use cpl_core::pool::SelectionMode;
use cpl_core::score::CsVariant;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A configuration problem, carrying the dotted path of the offending key.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config key `{path}`: {msg}")]
    Invalid { path: String, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
}

fn invalid(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), msg: msg.into() }
}

/// Frame-classifier shape. `feat_dim` and `vocab` come from the corpus, so
/// only the free knobs live here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Context radius in frames; each frame sees `2 * window + 1` frames.
    pub window: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { window: 2, hidden: 64 }
    }
}

/// Curriculum knobs, nested so overrides address them as `curriculum.K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Number of curriculum stages. Full-scale speech value: 5.
    #[serde(rename = "K")]
    pub num_stages: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { num_stages: 5 }
    }
}

/// Complete training configuration.
///
/// In JSON form every field is required except `ema_alpha`; the in-code
/// [`Default`] is the published starting point (`cpl train --dump-config`)
/// and what runs when no config file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate of the trapezoidal schedule. Full-scale speech
    /// value: 5e-5.
    pub peak_lr: f64,
    /// Supervised-only steps before the semi-supervised phase. Full-scale
    /// speech value: 20000.
    pub warmup_iters: usize,
    /// Semi-supervised steps, counted in labeled batches. Full-scale speech
    /// value: 30000.
    pub ssl_iters: usize,
    /// Unlabeled batches consumed per labeled batch. Full-scale speech
    /// value: 5.
    pub mu: usize,
    /// Pseudo-label pool capacity in batches. Full-scale speech value: 100.
    pub pool_batches: usize,
    pub curriculum: CurriculumConfig,
    /// Sequence-disagreement penalty weight inside the regularized score.
    /// Full-scale speech value: 1.
    pub lambda: f64,
    /// EMA decay factor. When absent it is derived so that a fraction
    /// `ema_retention` of the initial teacher survives all `ssl_iters`
    /// updates. Full-scale speech value: 0.999960.
    pub ema_alpha: Option<f64>,
    /// Retention used to derive `ema_alpha` when that field is absent.
    pub ema_retention: f64,
    /// Full-scale speech value: 64 total across 8 GPUs.
    pub batch_size_labeled: usize,
    pub batch_size_unlabeled: usize,
    pub selection_mode: SelectionMode,
    pub cs_variant: CsVariant,
    /// Strong augmentation; the weak policy is this one with time masking
    /// removed. Full-scale speech values: time 10 @ 0.65, channel 64 @ 0.5.
    pub strong_mask: MaskPolicy,
    pub model: ModelConfig,
    /// Evaluate (and log one record) every this many iterations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-3,
            warmup_iters: 300,
            ssl_iters: 1200,
            mu: 3,
            pool_batches: 10,
            curriculum: CurriculumConfig::default(),
            lambda: 1.0,
            ema_alpha: None,
            ema_retention: 0.3,
            batch_size_labeled: 8,
            batch_size_unlabeled: 8,
            selection_mode: SelectionMode::CurriculumCs,
            cs_variant: CsVariant::FirstFrame,
            strong_mask: MaskPolicy {
                time_mask_len: 2,
                time_mask_total_prob: 0.4,
                chan_mask_len: 4,
                chan_mask_prob: 0.3,
                kind: cpl_core::augment::MaskKind::Strong,
            },
            model: ModelConfig::default(),
            eval_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The EMA decay factor actually used: the explicit override, or the
    /// retention-derived value.
    pub fn effective_ema_alpha(&self) -> f64 {
        self.ema_alpha.unwrap_or_else(|| {
            cpl_core::optim::ema_alpha_from_retention(self.ssl_iters, self.ema_retention)
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(invalid("peak_lr", "must be finite and positive"));
        }
        if self.ssl_iters < 1 {
            return Err(invalid("ssl_iters", "must be at least 1"));
        }
        if self.mu < 1 {
            return Err(invalid("mu", "must be at least 1"));
        }
        if self.pool_batches < 1 {
            return Err(invalid("pool_batches", "must be at least 1"));
        }
        let k = self.curriculum.num_stages;
        if k < 1 || k > self.ssl_iters {
            return Err(invalid(
                "curriculum.K",
                format!("must satisfy 1 <= K <= ssl_iters, got {k} with ssl_iters {}", self.ssl_iters),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", "must be finite and non-negative"));
        }
        if let Some(alpha) = self.ema_alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(invalid("ema_alpha", "must lie strictly inside (0, 1)"));
            }
        }
        if !(self.ema_retention > 0.0 && self.ema_retention <= 1.0) {
            return Err(invalid("ema_retention", "must lie in (0, 1]"));
        }
        if self.batch_size_labeled < 1 {
            return Err(invalid("batch_size_labeled", "must be at least 1"));
        }
        if self.batch_size_unlabeled < 1 {
            return Err(invalid("batch_size_unlabeled", "must be at least 1"));
        }
        if let SelectionMode::Threshold(tau) = self.selection_mode {
            if !(0.0..=1.0).contains(&tau) {
                return Err(invalid("selection_mode.threshold", format!("{tau} outside [0, 1]")));
            }
        }
        self.strong_mask
            .validate()
            .map_err(|e| invalid("strong_mask", e.to_string()))?;
        if self.model.hidden < 1 {
            return Err(invalid("model.hidden", "must be at least 1"));
        }
        if self.eval_every < 1 {
            return Err(invalid("eval_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Parses a config from JSON text. Unknown keys are rejected, and the
/// message carries serde's path to the offender.
pub fn from_json(text: &str) -> Result<TrainConfig, ConfigError> {
    let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `key=value` overrides with dotted paths (`curriculum.K=5`) on top
/// of any JSON-shaped config. Values parse as JSON when possible (numbers,
/// booleans, quoted strings) and as bare strings otherwise, so
/// `selection_mode=oracle` works unquoted.
pub fn apply_json_overrides<T>(base: &T, overrides: &[String]) -> Result<T, ConfigError>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut tree = serde_json::to_value(base).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(entry.clone()))?;
        let value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(&mut tree, path, value)?;
    }
    serde_json::from_value(tree).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// [`apply_json_overrides`] for the training config, with re-validation.
pub fn apply_overrides(base: &TrainConfig, overrides: &[String]) -> Result<TrainConfig, ConfigError> {
    let cfg = apply_json_overrides(base, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn set_path(tree: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<(), ConfigError> {
    let mut node = tree;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| invalid(path, format!("`{}` is not an object", segments[..i].join("."))))?;
        if i + 1 == segments.len() {
            // Overrides may only touch keys that already exist; a typo must
            // not silently create a new key the deserializer then rejects
            // with a less precise message.
            if !map.contains_key(*seg) {
                return Err(invalid(path, "unknown config key"));
            }
            map.insert((*seg).to_string(), value);
            return Ok(());
        }
        node = map
            .get_mut(*seg)
            .ok_or_else(|| invalid(path, format!("unknown config key `{seg}`")))?;
    }
    Err(invalid(path, "empty key path"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = from_json(r#"{ "peak_lr": 0.001, "bogus_knob": 3 }"#).unwrap_err();
        assert!(err.to_string().contains("bogus_knob"));
    }

    #[test]
    fn missing_fields_are_named() {
        let mut tree = serde_json::to_value(TrainConfig::default()).unwrap();
        tree.as_object_mut().unwrap().remove("peak_lr");
        let err = from_json(&tree.to_string()).unwrap_err();
        assert!(err.to_string().contains("peak_lr"));
    }

    #[test]
    fn nested_stage_override_changes_only_that_key() {
        let base = TrainConfig::default();
        let cfg = apply_overrides(&base, &["curriculum.K=7".to_string()]).unwrap();
        assert_eq!(cfg.curriculum.num_stages, 7);
        assert_eq!(TrainConfig { curriculum: CurriculumConfig { num_stages: 7 }, ..base }, cfg);
    }

    #[test]
    fn override_accepts_bare_strings_and_json_values() {
        let base = TrainConfig::default();
        let cfg = apply_overrides(
            &base,
            &["selection_mode=oracle".to_string(), "peak_lr=0.01".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.selection_mode, SelectionMode::Oracle);
        assert_eq!(cfg.peak_lr, 0.01);
        let cfg = apply_overrides(&base, &["selection_mode=threshold(0.9)".to_string()]).unwrap();
        assert_eq!(cfg.selection_mode, SelectionMode::Threshold(0.9));
    }

    #[test]
    fn override_of_unknown_key_names_the_path() {
        let base = TrainConfig::default();
        let err = apply_overrides(&base, &["curriculum.J=7".to_string()]).unwrap_err();
        assert!(err.to_string().contains("curriculum.J"));
        let err = apply_overrides(&base, &["nope=1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn constraint_violations_name_the_key() {
        let base = TrainConfig::default();
        let err = apply_overrides(&base, &["curriculum.K=0".to_string()]).unwrap_err();
        assert!(err.to_string().contains("curriculum.K"));
        let err = apply_overrides(&base, &["lambda=-1.0".to_string()]).unwrap_err();
        assert!(err.to_string().contains("lambda"));
        let err = apply_overrides(&base, &["selection_mode=threshold(1.5)".to_string()]).unwrap_err();
        assert!(err.to_string().contains("selection_mode.threshold"));
    }

    #[test]
    fn ema_alpha_defaults_to_the_retention_formula() {
        let cfg = TrainConfig { ssl_iters: 30000, ..TrainConfig::default() };
        assert!((cfg.effective_ema_alpha() - 0.999960).abs() < 1e-6);
        let forced = TrainConfig { ema_alpha: Some(0.5), ..cfg };
        assert_eq!(forced.effective_ema_alpha(), 0.5);
    }
}
