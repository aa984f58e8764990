use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocr::DataPathConfig;
use crate::reward::RewardConfig;
use crate::roi::{AliasTable, PaddingPolicy};
use crate::trace::default_abstain_phrases;
use crate::vision::ParseMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything the pipeline and scorers need apart from the model backend.
///
/// Every field has a default, so `{}` is a valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub reward: RewardConfig,
    pub padding: PaddingPolicy,
    pub roi_aliases: AliasTable,
    pub data_path: DataPathConfig,
    /// Phrases that turn an answer segment into an abstention.
    pub abstain_phrases: Vec<String>,
    pub parse_mode: ParseMode,
    /// Maximum samples in flight.
    pub concurrency: usize,
    pub seed: u64,
    /// Adds wall-clock stage timings to results (which makes them non-reproducible).
    pub record_timings: bool,
    /// Taxonomy JSON; the built-in taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    /// Directory with `diagnostic*.txt`, `reasoning*.txt`, `fusion*.txt`.
    pub templates_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            reward: RewardConfig::default(),
            padding: PaddingPolicy::default(),
            roi_aliases: AliasTable::default(),
            data_path: DataPathConfig::default(),
            abstain_phrases: default_abstain_phrases(),
            parse_mode: ParseMode::Lenient,
            concurrency: 4,
            seed: 0,
            record_timings: false,
            taxonomy: None,
            templates_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.taxonomy, &mut cfg.templates_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be >= 1".into()));
        }
        let p = &self.padding;
        if !(p.legend_fraction >= 0.0 && p.axis_fraction >= 0.0)
            || p.legend_min < 0
            || p.axis_min < 0
            || p.axis_cross < 0
            || p.title < 0
        {
            return Err(ConfigError::Invalid("padding values must be >= 0".into()));
        }
        if self.abstain_phrases.iter().any(|s| s.trim().is_empty()) {
            return Err(ConfigError::Invalid("abstain phrases must be non-empty".into()));
        }
        Ok(())
    }
}
