//! Run configuration loaded from TOML. Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::{ClassificationGen, SurvivalGen};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::mil::MilConfig;
use crate::model::{ClinicalSection, GraphSection, ModelConfig};
use crate::objectives::{LossConfig, Task};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub seed: u64,
    pub classification: ClassificationGen,
    pub survival: SurvivalGen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub clinical: ClinicalSection,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub mil: MilConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataSection,
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            graph: GraphSection::default(),
            clinical: ClinicalSection::default(),
            fusion: FusionConfig::default(),
            mil: MilConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataSection::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            task: self.task,
            graph: self.graph.clone(),
            clinical: self.clinical.clone(),
            fusion: self.fusion.clone(),
            mil: self.mil.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss.validate()?;
        self.train.validate()
    }
}
