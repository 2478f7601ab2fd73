//! Run configuration: one JSON file, overridable from the command line with
//! `--set key.path=value`, so every run stays archivable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use favoa_core::model::ModelConfig;
use favoa_core::synth::GeneratorConfig;
use favoa_core::train::{AdamParams, Schedule, TrainOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("bad --set override {0:?}: expected key.path=value")]
    BadOverride(String),
}

/// Generator settings without a seed; the run seed covers generation too.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub scenes: usize,
    pub persons_per_scene: usize,
    pub frames_per_scene: usize,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    #[serde(default = "defaults::half")]
    pub ambiguous_fraction: f64,
    #[serde(default = "defaults::prevalence")]
    pub speaking_prevalence: f64,
    #[serde(default = "defaults::not_audible")]
    pub not_audible_rate: f64,
    #[serde(default = "defaults::val_fraction")]
    pub val_fraction: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            scenes: 24,
            persons_per_scene: 2,
            frames_per_scene: 12,
            noise: defaults::noise(),
            ambiguous_fraction: defaults::half(),
            speaking_prevalence: defaults::prevalence(),
            not_audible_rate: defaults::not_audible(),
            val_fraction: defaults::val_fraction(),
        }
    }
}

mod defaults {
    pub fn noise() -> f64 {
        0.1
    }
    pub fn half() -> f64 {
        0.5
    }
    pub fn prevalence() -> f64 {
        0.4
    }
    pub fn not_audible() -> f64 {
        0.02
    }
    pub fn val_fraction() -> f64 {
        0.25
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn threshold() -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub adam: AdamParams,
    pub threshold: f64,
    /// Replace the voice branch input with zeros (context-only ablation).
    pub ablate_voice: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            schedule: Schedule::default(),
            adam: AdamParams::default(),
            threshold: defaults::threshold(),
            ablate_voice: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Manifest path; relative paths resolve against the config file's
    /// directory. Defaults to `<output_dir>/data/manifest.json`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dataset: DatasetSection,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Json {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut config: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        // Anchor relative paths at the config file's directory.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        if let Some(manifest) = &config.dataset.manifest {
            if manifest.is_relative() {
                config.dataset.manifest = Some(base.join(manifest));
            }
        }
        config.model.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            scenes: self.generator.scenes,
            persons_per_scene: self.generator.persons_per_scene,
            frames_per_scene: self.generator.frames_per_scene,
            noise: self.generator.noise,
            ambiguous_fraction: self.generator.ambiguous_fraction,
            speaking_prevalence: self.generator.speaking_prevalence,
            not_audible_rate: self.generator.not_audible_rate,
            val_fraction: self.generator.val_fraction,
            ste_dim: self.model.ste_dim,
            fv_dim: self.model.fv_dim,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            schedule: self.train.schedule,
            adam: self.train.adam,
            threshold: self.train.threshold,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data/manifest.json"))
    }
}

/// Apply one `key.path=value` override onto the raw JSON tree. Values parse
/// as JSON when possible and fall back to plain strings.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (key_path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let keys: Vec<&str> = key_path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value: serde_json::Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?
            .entry(key.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    node.as_object_mut()
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
