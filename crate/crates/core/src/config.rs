//! Run configuration: one TOML file holding every hyperparameter, with dotted
//! `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PhantomSpec;
use crate::error::{Error, FormatKind, Result};
use crate::metrics::HausdorffVariant;
use crate::pipeline::{IterationConfig, Selector};
use crate::refiner::{ProposalConfig, RefinerDims, TrainConfig};
use crate::segmenter::{BackendChoice, OracleConfig, RemoteBackend, RemoteConfig};

pub const SCHEMA_VERSION: u32 = 1;

fn config_error(msg: impl Into<String>) -> Error {
    Error::format(FormatKind::Config, msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory holding `manifest.json`.
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            checkpoint: "run/refiner.ckpt".into(),
            report_dir: "run/report".into(),
        }
    }
}

impl PathsConfig {
    pub fn manifest(&self) -> PathBuf {
        self.data_dir.join("manifest.json")
    }
}

/// Phantom generator settings; the seed is the run's `rng_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub blobs: [usize; 2],
    pub radius: [f64; 2],
    pub contrast: f64,
    pub noise_sigma: f64,
    pub spacing_mm: f64,
    pub class_id: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let s = PhantomSpec::default();
        PhantomConfig {
            count: s.count,
            width: s.width,
            height: s.height,
            blobs: s.blobs,
            radius: s.radius,
            contrast: s.contrast,
            noise_sigma: s.noise_sigma,
            spacing_mm: s.spacing_mm,
            class_id: s.class_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub patch: usize,
    pub hidden: usize,
    pub dim: usize,
    /// Number of classes including background (class 0).
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = RefinerDims::default();
        ModelConfig {
            patch: d.patch,
            hidden: d.hidden,
            dim: d.dim,
            classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> RefinerDims {
        RefinerDims {
            patch: self.patch,
            hidden: self.hidden,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub epochs: u32,
    /// Intermediate checkpoint period in epochs; 0 writes only the final one.
    pub checkpoint_every: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epochs: 50,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Rounds for single-sample inference.
    pub rounds: usize,
    /// Round counts swept by evaluation.
    pub eval_rounds: Vec<usize>,
    pub selector: Selector,
    pub hausdorff: HausdorffVariant,
    pub jobs: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            rounds: 5,
            eval_rounds: vec![1, 2, 3, 5, 10],
            selector: Selector::Learned,
            hausdorff: HausdorffVariant::Max,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleNoise {
    pub perturb_radius: usize,
    pub perturb_rate: f64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        let o = OracleConfig::default();
        OracleNoise {
            perturb_radius: o.perturb_radius,
            perturb_rate: o.perturb_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub oracle: OracleNoise,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seeds phantom generation, weight init, shuffling and oracle noise.
    pub rng_seed: u64,
    pub paths: PathsConfig,
    pub phantom: PhantomConfig,
    pub model: ModelConfig,
    pub proposals: ProposalConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub inference: InferenceConfig,
    pub backend: BackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            rng_seed: 42,
            paths: PathsConfig::default(),
            phantom: PhantomConfig::default(),
            model: ModelConfig::default(),
            proposals: ProposalConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleConfig::default(),
            inference: InferenceConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

fn to_table(cfg: &RunConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("config serializes to a table")
}

fn from_table(table: toml::Table) -> Result<RunConfig> {
    table.try_into().map_err(|e: toml::de::Error| config_error(e.message().to_string()))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.to_string())),
        }
    }
}

impl RunConfig {
    /// Parse a config file body. `schema_version` must be present and current.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        match table.get("schema_version") {
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(config_error(format!("unsupported schema_version {v}"))),
            None => return Err(config_error("missing schema_version")),
        }
        let cfg = from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.into())),
            Err(e) => return Err(e.into()),
        };
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format { kind, message } => Error::format(kind, format!("{}: {message}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key=value` where `key` is a dotted path to an existing setting.
    /// The value is read as a TOML literal, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_error(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = to_table(self);
        let mut node = &mut table;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        for part in parents {
            node = match node.get_mut(*part) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(config_error(format!("unknown config key {key:?}"))),
            };
        }
        match node.get_mut(*last) {
            Some(toml::Value::Table(_)) | None => return Err(config_error(format!("unknown config key {key:?}"))),
            Some(slot) => *slot = value,
        }
        let updated = from_table(table).map_err(|e| config_error(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!("unsupported schema_version {}", self.schema_version)));
        }
        self.phantom_spec().validate()?;
        self.proposals.validate()?;
        self.train.validate()?;
        let m = &self.model;
        if m.patch == 0 || m.hidden == 0 || m.dim == 0 {
            return Err(Error::invalid("model sizes must be positive"));
        }
        if m.classes < 2 {
            return Err(Error::invalid("at least two classes (background and foreground) are required"));
        }
        if self.train.background_class >= m.classes || self.phantom.class_id >= m.classes {
            return Err(Error::invalid("class ids must be below model.classes"));
        }
        let inf = &self.inference;
        if inf.rounds == 0 || inf.eval_rounds.is_empty() || inf.eval_rounds.contains(&0) {
            return Err(Error::invalid("round counts must be positive"));
        }
        if inf.jobs == 0 {
            return Err(Error::invalid("jobs must be positive"));
        }
        self.oracle_config().validate()
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        let p = &self.phantom;
        PhantomSpec {
            count: p.count,
            width: p.width,
            height: p.height,
            blobs: p.blobs,
            radius: p.radius,
            contrast: p.contrast,
            noise_sigma: p.noise_sigma,
            spacing_mm: p.spacing_mm,
            class_id: p.class_id,
            rng_seed: self.rng_seed,
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            perturb_radius: self.backend.oracle.perturb_radius,
            perturb_rate: self.backend.oracle.perturb_rate,
            rng_seed: self.rng_seed,
        }
    }

    pub fn backend_choice(&self) -> BackendChoice {
        match self.backend.kind {
            BackendKind::Oracle => BackendChoice::Oracle(self.oracle_config()),
            BackendKind::Remote => BackendChoice::Remote(RemoteBackend::new(self.backend.remote.clone())),
        }
    }

    pub fn iteration_config(&self, rounds: usize) -> IterationConfig {
        IterationConfig {
            rounds,
            proposals: self.proposals.clone(),
            selector: self.inference.selector,
        }
    }

    /// Every setting as `key = value` lines, sorted by key.
    pub fn key_listing(&self) -> String {
        let mut pairs = Vec::new();
        flatten("", &to_table(self), &mut pairs);
        let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        pairs.iter().map(|(k, v)| format!("  {k:<width$} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("schema_version = 1\nrng_seed = 7\n[train.sgd]\nlr = 0.05\n").unwrap();
        assert_eq!(cfg.rng_seed, 7);
        assert_eq!(cfg.train.sgd.lr, 0.05);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.phantom_spec().rng_seed, 7);
    }

    #[test]
    fn schema_and_unknown_keys() {
        assert!(RunConfig::from_toml_str("rng_seed = 1").is_err());
        assert!(RunConfig::from_toml_str("schema_version = 2").is_err());
        let err = RunConfig::from_toml_str("schema_version = 1\n[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Format { kind: FormatKind::Config, .. }), "{err}");
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.sgd.lr=0.02").unwrap();
        cfg.apply_override("proposals.scales = [1.0, 2.0]").unwrap();
        cfg.apply_override("backend.kind=remote").unwrap();
        cfg.apply_override("backend.remote.endpoint=http://10.0.0.1:9000").unwrap();
        cfg.apply_override("inference.eval_rounds=[1,5]").unwrap();
        assert_eq!(cfg.train.sgd.lr, 0.02);
        assert_eq!(cfg.proposals.scales, vec![1.0, 2.0]);
        assert_eq!(cfg.backend.kind, BackendKind::Remote);
        assert_eq!(cfg.backend.remote.endpoint, "http://10.0.0.1:9000");
        assert_eq!(cfg.inference.eval_rounds, vec![1, 5]);

        assert!(cfg.apply_override("train.nope=1").is_err());
        assert!(cfg.apply_override("train=1").is_err());
        assert!(cfg.apply_override("train.batch_size=fast").is_err());
        assert!(cfg.apply_override("train.batch_size=0").is_err());
        assert!(cfg.apply_override("no_equals").is_err());
        assert_eq!(cfg.train.batch_size, 8);
    }

    #[test]
    fn listing_covers_nested_keys() {
        let listing = RunConfig::default().key_listing();
        for key in ["rng_seed", "train.sgd.lr", "proposals.scales", "backend.remote.endpoint", "phantom.radius"] {
            assert!(listing.lines().any(|l| l.trim_start().starts_with(key)), "{key} missing");
        }
    }
}
