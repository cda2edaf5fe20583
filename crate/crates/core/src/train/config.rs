//! Experiment configuration: one JSON document with a `version` field.
//!
//! Dotted overrides (`schedule.p=0.5`) are applied to the fully expanded
//! document, defaults included, so any key that exists can be overridden and
//! any key that does not is an error. The right-hand side is read as JSON
//! when it parses as JSON and as a bare string otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::fetch::cache_dir;
use crate::data::{AugmentationPolicy, DatasetFormat, ResizeMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::schedule::{build_schedule, Policy, Resolution, Schedule, ScheduleParams};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub format: DatasetFormat,
    /// Directory holding the files; defaults to `<cache>/<name>`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    pub train_files: Vec<String>,
    pub val_files: Vec<String>,
    pub native_resolution: Resolution,
    /// Use only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub val_limit: Option<usize>,
}

impl DatasetSpec {
    pub fn root_dir(&self) -> PathBuf {
        self.root.clone().unwrap_or_else(|| cache_dir().join(&self.name))
    }
}

fn default_true() -> bool {
    true
}

fn default_guard() -> usize {
    2
}

fn default_decay() -> f64 {
    0.1
}

fn default_bilinear() -> ResizeMode {
    ResizeMode::Bilinear
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// `false` trains every epoch at the native resolution.
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub epochs: usize,
    pub lambda: Resolution,
    pub p: f64,
    #[serde(default)]
    pub policy: Policy,
    /// Defaults to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_guard")]
    pub guard_radius: usize,
    /// Interpolation for the reduced epochs.
    #[serde(default)]
    pub resize_mode: ResizeMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Learning rate is multiplied by this at every milestone.
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub precision: Precision,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub augmentation: AugmentationPolicy,
    #[serde(default)]
    pub label_smoothing: f64,
    /// Resolutions for the post-hoc stress test.
    #[serde(default)]
    pub eval_resolutions: Vec<Resolution>,
    #[serde(default = "default_bilinear")]
    pub eval_resize_mode: ResizeMode,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path`, apply `overrides` in order, validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let base = Self::from_json(&std::fs::read_to_string(path)?)?;
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn schedule_seed(&self) -> u64 {
        self.schedule.seed.unwrap_or(self.seed)
    }

    pub fn native(&self) -> Resolution {
        self.dataset.native_resolution
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        self.model.validate()?;
        let s = &self.schedule;
        if s.epochs == 0 {
            return Err(Error::config("schedule.epochs", "must be positive"));
        }
        if let Some(&m) = s.milestones.iter().find(|&&m| m >= s.epochs) {
            return Err(Error::config("schedule.milestones", format!("milestone {m} outside [0, {})", s.epochs)));
        }
        if !(0.0..=1.0).contains(&s.p) {
            return Err(Error::config("schedule.p", "must lie in [0, 1]"));
        }
        let native = self.native();
        if !s.lambda.fits_within(native) {
            return Err(Error::config("schedule.lambda", format!("{} exceeds native {native}", s.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2 (batch norm)"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("optimizer.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&o.momentum) || o.weight_decay < 0.0 || !(o.decay_factor > 0.0) {
            return Err(Error::config("optimizer", "momentum in [0,1), weight_decay >= 0, decay_factor > 0"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must lie in [0, 1)"));
        }
        self.augmentation.validate(self.model.in_channels, native)?;
        let min = self.model.min_input_resolution();
        if let Some(r) = self.eval_resolutions.iter().find(|r| r.height < min || r.width < min) {
            return Err(Error::config("eval_resolutions", format!("{r} is below the network minimum {min}")));
        }
        if self.dataset.train_files.is_empty() || self.dataset.val_files.is_empty() {
            return Err(Error::config("dataset", "train_files and val_files must be non-empty"));
        }
        Ok(())
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        let s = &self.schedule;
        ScheduleParams {
            total_epochs: s.epochs,
            original: self.native(),
            reduced: s.lambda,
            participation_rate: s.p,
            seed: self.schedule_seed(),
            lr_milestones: s.milestones.clone(),
            guard_radius: s.guard_radius,
            policy: s.policy,
        }
    }

    /// The plan this config trains with; a disabled schedule never reduces.
    pub fn build_schedule(&self) -> Result<Schedule> {
        if self.schedule.enabled {
            build_schedule(&self.schedule_params())
        } else {
            Schedule::fixed(self.schedule.epochs, self.native(), self.schedule_seed())
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.schedule.milestones.iter().filter(|&&m| m <= epoch).count();
        self.optimizer.lr * self.optimizer.decay_factor.powi(decays as i32)
    }
}

/// Set `path=value` inside `doc`. Every path segment must already exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key.path=value"))?;
    let path = path.trim();
    let mut node = doc;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(path, "unknown configuration key"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
            "version": 1, "name": "t", "seed": 1,
            "dataset": {"name": "toy", "format": "idx", "train_files": ["a", "b"], "val_files": ["c", "d"],
                        "native_resolution": 8},
            "model": {"in_channels": 1, "stem_channels": 4, "stages": [{"blocks": 1, "channels": 4, "stride": 2}],
                      "class_count": 3},
            "schedule": {"epochs": 30, "lambda": 4, "p": 0.5, "milestones": [15]},
            "optimizer": {"lr": 0.1, "momentum": 0.9},
            "batch_size": 4,
            "augmentation": {"mean": [0.5], "std": [0.25]},
            "output_dir": "/tmp/x"
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = sample();
        assert!(c.deterministic && c.schedule.enabled);
        assert_eq!(c.schedule.guard_radius, 2);
        assert_eq!(c.schedule.policy, Policy::EpochWise);
        assert_eq!(c.eval_resize_mode, ResizeMode::Bilinear);
        assert_eq!(c.schedule_seed(), 1);
    }

    #[test]
    fn lr_steps_at_milestones() {
        let c = sample();
        let lrs: Vec<f64> = (0..30).map(|e| c.lr_at(e)).collect();
        assert!(lrs[..15].iter().all(|&l| l == 0.1));
        assert!(lrs[15..].iter().all(|&l| (l - 0.01).abs() < 1e-15));
    }

    #[test]
    fn overrides_set_existing_keys_only() {
        let c = sample();
        let o = c
            .with_overrides(&["schedule.p=0.25".into(), "schedule.lambda=6".into(), "schedule.policy=regular".into()])
            .unwrap();
        assert_eq!(o.schedule.p, 0.25);
        assert_eq!(o.schedule.lambda, Resolution::square(6));
        assert_eq!(o.schedule.policy, Policy::Regular);
        let o = c.with_overrides(&["schedule.seed=9".into(), "dataset.train_limit=100".into()]).unwrap();
        assert_eq!(o.schedule_seed(), 9);
        assert_eq!(o.dataset.train_limit, Some(100));
        for bad in ["schedule.q=1", "nope=1", "schedule.p", "schedule.p=2", "schedule.policy=sideways"] {
            assert!(matches!(c.with_overrides(&[bad.into()]), Err(Error::Config { .. })), "{bad}");
        }
    }

    #[test]
    fn invalid_documents() {
        let c = sample();
        let mut v = serde_json::to_value(&c).unwrap();
        v["schedule"]["milestones"] = serde_json::json!([30]);
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = serde_json::to_value(&c).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_value(v).is_err());
        assert!(c.with_overrides(&["version=2".into()]).is_err());
        assert!(c.with_overrides(&["eval_resolutions=[1]".into()]).is_err());
    }
}
