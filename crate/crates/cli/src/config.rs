//! Run configuration: one TOML file, with `PROEDIT_SEED` as the only override.

use std::path::{Path, PathBuf};

use proedit_core::camera::{CameraParams, Orbit};
use proedit_core::editor::{FosParams, RemoteEditorConfig};
use proedit_core::pipeline::PipelineConfig;
use proedit_core::scene::SceneSpec;
use proedit_core::scheduler::Preset;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "PROEDIT_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{SEED_ENV}={0:?} is not a 64-bit unsigned integer")]
    Seed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneConfig {
    Synthetic(SceneSpec),
    Checkpoints { source: PathBuf, target: Option<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewsConfig {
    Explicit { cameras: Vec<CameraParams> },
    Orbit(Orbit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    Preset(Preset),
    Threshold(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditorConfig {
    Synthetic(FosParams),
    Remote(RemoteEditorConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    pub run_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serve: Option<String>,
    /// Optional prompt embeddings (`dim=` header, edit line, null line).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub scene: SceneConfig,
    pub views: ViewsConfig,
    pub schedule: ScheduleConfig,
    pub editor: EditorConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// Parses TOML; relative paths stay relative to the working directory.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Reads `path`, then applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| ConfigError::Seed(v.to_string()))?;
        }
        Ok(())
    }

    pub fn resolution(&self) -> Option<[usize; 2]> {
        match &self.views {
            ViewsConfig::Orbit(o) => Some(o.resolution),
            ViewsConfig::Explicit { cameras } => cameras.first().map(|c| c.resolution),
        }
    }

    pub fn view_count(&self) -> usize {
        match &self.views {
            ViewsConfig::Orbit(o) => o.count,
            ViewsConfig::Explicit { cameras } => cameras.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.view_count() < 2 {
            return bad(format!("need at least 2 views, got {}", self.view_count()));
        }
        if let ViewsConfig::Explicit { cameras } = &self.views {
            if cameras.iter().any(|c| c.resolution != cameras[0].resolution) {
                return bad("explicit cameras must share one resolution".into());
            }
        }
        match self.resolution() {
            Some([w, h]) if w >= 32 && h >= 32 => {}
            other => return bad(format!("resolution must be at least 32x32, got {other:?}")),
        }
        if let ScheduleConfig::Threshold(t) = self.schedule {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("threshold must be positive, got {t}"));
            }
        }
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
