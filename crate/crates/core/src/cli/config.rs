use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionMode, ModelConfig};
use crate::training::{AdamConfig, EarlyStop, LossWeights, OmegaKind, TrainOptions};

/// Version of the run-config key set.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_layers() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_beta() -> f64 {
    0.1
}
fn default_one() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.001
}
fn default_decay() -> f64 {
    0.99
}
fn default_beta_a() -> f64 {
    0.9
}
fn default_beta_b() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    1000
}
fn default_checkpoint_every() -> usize {
    100
}
fn default_patience() -> usize {
    25
}
fn default_tol() -> f64 {
    1e-7
}

/// Flat run configuration read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub common_dim: usize,
    #[serde(default = "default_layers")]
    pub encoder_layers: usize,
    /// Defaults to `encoder_layers`.
    #[serde(default)]
    pub decoder_layers: Option<usize>,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub attention_mode: AttentionMode,
    /// Required by `grad-check`; must match the data when given to `train`.
    #[serde(default)]
    pub feature_dims: Option<Vec<usize>>,
    /// Reserved: only `false` is accepted.
    #[serde(default)]
    pub batch_norm: Option<bool>,

    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    #[serde(default)]
    pub omega: OmegaKind,
    #[serde(default = "default_one")]
    pub c_fro_weight: f64,

    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_beta_a")]
    pub adam_beta_a: f64,
    #[serde(default = "default_beta_b")]
    pub adam_beta_b: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,

    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub best_view: Option<usize>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_tol")]
    pub early_stop_tol: f64,
}

impl RunConfig {
    /// Defaults for everything except the architecture size.
    pub fn with_common_dim(common_dim: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "common_dim": common_dim })).expect("defaults parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Format {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Checks every key against its range.
    pub fn validate(&self) -> Result<()> {
        if self.batch_norm == Some(true) {
            return Err(Error::invalid("batch_norm is not supported (only false is accepted)"));
        }
        let dims = self.feature_dims.clone().unwrap_or_else(|| vec![1]);
        self.model_config(&dims).validate()?;
        self.loss_weights().validate()?;
        self.adam().validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.early_stop && (self.early_stop_patience == 0 || self.early_stop_tol.is_nan() || self.early_stop_tol < 0.0) {
            return Err(Error::invalid("early_stop_patience must be >= 1 and early_stop_tol >= 0"));
        }
        if let (Some(v), Some(dims)) = (self.best_view, &self.feature_dims) {
            if v >= dims.len() {
                return Err(Error::invalid(format!("best_view {v} out of range for {} views", dims.len())));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dims: &[usize]) -> ModelConfig {
        ModelConfig {
            feature_dims: feature_dims.to_vec(),
            common_dim: self.common_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers.unwrap_or(self.encoder_layers),
            residual: self.residual,
            attention_mode: self.attention_mode,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta1: self.beta1,
            beta2: self.beta2,
            omega: self.omega,
            c_fro_weight: self.c_fro_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay: self.decay,
            beta_a: self.adam_beta_a,
            beta_b: self.adam_beta_b,
            eps: self.adam_eps,
        }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            seed,
            optimizer: self.adam(),
            early_stop: self.early_stop.then_some(EarlyStop {
                patience: self.early_stop_patience,
                tol: self.early_stop_tol,
            }),
            checkpoint_every: self.checkpoint_every,
        }
    }
}
