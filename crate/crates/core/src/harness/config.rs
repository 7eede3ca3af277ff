use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{MixKind, MixMethod};
use crate::data::DatasetSpec;
use crate::distill::LossWeights;
use crate::error::{CekdError, Result};
use crate::model::NetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub teacher_init: u64,
    pub student_init: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Seeds {
        Seeds {
            data: 1,
            teacher_init: 2,
            student_init: 3,
            train: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Both networks, cross distillation and ensembles.
    Cekd,
    /// One network trained on its own augmentation only (baseline).
    SingleTeacher,
}

/// Fully resolved experiment description; serialized beside every run.
/// Unknown keys are rejected when loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// When set, load the dataset from this directory instead of generating.
    pub dataset_path: Option<String>,
    pub net: NetConfig,
    pub train_mode: TrainMode,
    pub teacher_method: MixMethod,
    pub student_method: MixMethod,
    pub temperature: f64,
    pub lambdas: [f64; 6],
    pub ce_weight: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub lr_decay_every: u64,
    pub lr_factor: f64,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            dataset_path: None,
            net: NetConfig::default(),
            train_mode: TrainMode::Cekd,
            teacher_method: MixMethod {
                kind: MixKind::SnapMix,
                alpha: 5.0,
                apply_prob: 1.0,
            },
            student_method: MixMethod {
                kind: MixKind::MixUp,
                alpha: 5.0,
                apply_prob: 0.5,
            },
            temperature: 4.0,
            lambdas: [0.7, 0.3, 0.5, 0.5, 0.5, 0.5],
            ce_weight: 1.0,
            epochs: 60,
            batch_size: 32,
            base_lr: 0.05,
            momentum: 0.9,
            lr_decay_every: 25,
            lr_factor: 0.1,
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.dataset.validate()?;
        self.teacher_method.validate()?;
        self.student_method.validate()?;
        self.loss_weights().validate()?;
        if self.batch_size < 2 {
            return Err(CekdError::Config("batch_size must be >= 2".into()));
        }
        if self.epochs == 0 {
            return Err(CekdError::Config("epochs must be >= 1".into()));
        }
        if self.base_lr <= 0.0 || self.lr_factor <= 0.0 || self.lr_decay_every == 0 {
            return Err(CekdError::Config("invalid learning-rate schedule".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CekdError::Config("momentum must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambdas: self.lambdas,
            temperature: self.temperature,
            ce_weight: self.ce_weight,
        }
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let raw = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| CekdError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CekdError::Config(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
