//! Experiment configuration files and the data sources they name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_synthetic_motions, Result, SyntheticMotionParams, ToolkitError};
use crate::embodiment::{fixture, import_urdf, parse_embodiment, EmbodimentSpec, Motion};
use crate::latent::ModelConfig;
use crate::policy::PolicyConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSource {
    Synthetic(SyntheticMotionParams),
    /// Glob of Motion JSON files, relative to the config file.
    Files(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Spec sources: `fixture:<name>`, a `.urdf` file, or an embodiment JSON file.
    pub human: String,
    pub robots: Vec<String>,
    pub motions: MotionSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub output_dir: PathBuf,
    /// Seeds network initialization and the train/test split.
    pub seed: u64,
    /// Fraction of motions used for training.
    pub split: f64,
    pub log_every: usize,
    /// Steps of embedding-only training when adding a robot.
    pub adapt_steps: usize,
    /// Learning rate of embedding-only training; `train.lr` when absent.
    pub adapt_lr: Option<f64>,
    /// Intermediate checkpoint period in steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Control episodes per robot in evaluation reports.
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            human: "fixture:human".into(),
            robots: vec!["fixture:tiago".into(), "fixture:h1".into()],
            motions: MotionSource::Synthetic(SyntheticMotionParams::default()),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            split: 0.8,
            log_every: 100,
            adapt_steps: 1000,
            adapt_lr: None,
            checkpoint_every: 0,
            eval_episodes: 100,
            eval_horizon: 30,
            base_dir: PathBuf::from("."),
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> ToolkitError {
    ToolkitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io(path, e))
}

/// Resolves a spec source; relative paths are taken from `base`.
pub fn resolve_spec(source: &str, base: &Path) -> Result<EmbodimentSpec> {
    if let Some(name) = source.strip_prefix("fixture:") {
        return Ok(fixture(name)?);
    }
    let path = base.join(source);
    let text = read_text(&path)?;
    let spec = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("urdf")) {
        EmbodimentSpec::from_doc(import_urdf(&text)?)
    } else {
        parse_embodiment(&text)
    };
    spec.map_err(|e| io(&path, e))
}

/// Motion files matching `pattern`, in sorted path order.
pub fn load_motion_glob(pattern: &str) -> Result<Vec<Motion>> {
    let paths = glob::glob(pattern).map_err(|e| ToolkitError::InvalidParams(format!("bad glob '{pattern}': {e}")))?;
    let mut paths: Vec<PathBuf> = paths.filter_map(|p| p.ok()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ToolkitError::InvalidParams(format!("no motion files match '{pattern}'")));
    }
    paths.iter().map(|p| Motion::load(p).map_err(|e| io(p, e))).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg = Self::from_json(&text).map_err(|e| io(path, e))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| format!("{}: {}", e.path(), e.inner()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(ToolkitError::InvalidParams(format!("split must lie in (0, 1), got {}", self.split)));
        }
        self.model.validate().map_err(|e| ToolkitError::InvalidParams(e.to_string()))?;
        self.train.validate().map_err(|e| ToolkitError::InvalidParams(e.to_string()))?;
        self.policy.validate().map_err(|e| ToolkitError::InvalidParams(e.to_string()))?;
        if let Some(lr) = self.adapt_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(ToolkitError::InvalidParams(format!("adapt_lr must be positive, got {lr}")));
            }
        }
        if self.robots.is_empty() {
            return Err(ToolkitError::InvalidParams("at least one robot is required".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    pub fn human_spec(&self) -> Result<EmbodimentSpec> {
        resolve_spec(&self.human, &self.base_dir)
    }

    pub fn robot_specs(&self) -> Result<Vec<EmbodimentSpec>> {
        self.robots.iter().map(|s| resolve_spec(s, &self.base_dir)).collect()
    }

    pub fn load_motions(&self, human: &EmbodimentSpec) -> Result<Vec<Motion>> {
        match &self.motions {
            MotionSource::Synthetic(p) => generate_synthetic_motions(human, p),
            MotionSource::Files(pattern) => {
                let full = self.base_dir.join(pattern);
                load_motion_glob(&full.to_string_lossy())
            }
        }
    }
}
