//! Run configuration loaded from a sectioned TOML file.

use std::path::{Path, PathBuf};

use ncd_core::model::ModelDims;
use ncd_core::pseudo_label::SinkhornConfig;
use ncd_core::{AugmentConfig, DatasetSplit, IntraMode, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_widths: Vec<usize>,
    pub hidden_dim: usize,
    pub over_factor: usize,
    pub num_over_heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::new(1, 2, 2);
        Self { encoder_widths: d.encoder_widths, hidden_dim: d.hidden_dim, over_factor: d.over_factor, num_over_heads: d.num_over_heads }
    }
}

/// The scalar part of [`TrainConfig`]; Sinkhorn and augmentation settings
/// live in their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub pretrain_epochs: usize,
    pub discover_epochs: usize,
    pub batch_size: usize,
    pub intra_mode: IntraMode,
    pub inter_enabled: bool,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            alpha: t.alpha,
            beta: t.beta,
            tau: t.tau,
            lr: t.lr,
            momentum: t.momentum,
            pretrain_epochs: t.pretrain_epochs,
            discover_epochs: t.discover_epochs,
            batch_size: t.batch_size,
            intra_mode: t.intra_mode,
            inter_enabled: t.inter_enabled,
            eval_every: t.eval_every,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { seeds: (0..5).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SyntheticSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sinkhorn: SinkhornConfig,
    pub augment: AugmentConfig,
    pub ablation: AblationSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.data.seed = s;
            self.train.seed = s;
        }
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha: t.alpha,
            beta: t.beta,
            tau: t.tau,
            lr: t.lr,
            momentum: t.momentum,
            pretrain_epochs: t.pretrain_epochs,
            discover_epochs: t.discover_epochs,
            batch_size: t.batch_size,
            intra_mode: t.intra_mode,
            inter_enabled: t.inter_enabled,
            sinkhorn: self.sinkhorn,
            augment: self.augment.clone(),
            eval_every: t.eval_every,
            seed: t.seed,
        }
    }

    /// Model geometry for a dataset: widths from the config, sizes from the data.
    pub fn model_dims(&self, split: &DatasetSplit) -> ModelDims {
        ModelDims {
            input_dim: split.input_dim(),
            encoder_widths: self.model.encoder_widths.clone(),
            hidden_dim: self.model.hidden_dim,
            c_l: split.c_l,
            c_u: split.c_u,
            over_factor: self.model.over_factor,
            num_over_heads: self.model.num_over_heads,
            tau: self.train.tau,
        }
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.data.validate()?;
        self.train_config().validate()?;
        if self.model.encoder_widths.is_empty() || self.model.encoder_widths.contains(&0) {
            return Err(CliError::Config("model.encoder_widths must be non-empty and positive".into()));
        }
        if self.model.hidden_dim == 0 || self.model.over_factor == 0 {
            return Err(CliError::Config("model.hidden_dim and model.over_factor must be positive".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(CliError::Config("ablation.seeds must not be empty".into()));
        }
        Ok(())
    }
}
