use std::path::Path;

use anyhow::{Context, Result};
use mvs_bisect::fusion::FusionConfig;
use mvs_bisect::scene::{SceneShape, SceneSpec};
use mvs_bisect::search::SearchConfig;
use mvs_bisect::training::{TrainConfig, UpdateMode};
use serde::{Deserialize, Serialize};

/// Training data (synthetic scenes generated from `scene` with consecutive
/// seeds) and the optimization schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSet {
    pub scenes: usize,
    pub shape: SceneShape,
    pub epochs: usize,
    pub step: f64,
    pub epochs_per_increase: usize,
    pub teacher_forcing: bool,
    pub mode: UpdateMode,
}

impl Default for TrainingSet {
    fn default() -> Self {
        let schedule = TrainConfig::default();
        TrainingSet {
            scenes: 4,
            shape: SceneShape::FrontoParallel,
            epochs: schedule.epochs,
            step: schedule.step,
            epochs_per_increase: schedule.epochs_per_increase,
            teacher_forcing: schedule.teacher_forcing,
            mode: schedule.mode,
        }
    }
}

impl TrainingSet {
    pub fn schedule(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            step: self.step,
            epochs_per_increase: self.epochs_per_increase,
            teacher_forcing: self.teacher_forcing,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneSpec,
    pub search: SearchConfig,
    pub fusion: FusionConfig,
    pub train: TrainingSet,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
