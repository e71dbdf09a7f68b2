//! Model directory: `meta.json` plus one CSV per parameter matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const META_FILE: &str = "meta.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Optimizer progress recorded alongside a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epochs_run: usize,
    pub adam_timestep: u64,
    pub last_lr: f64,
    pub final_loss_total: Option<f64>,
    pub stopped_early: bool,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub num_samples: usize,
    pub seed: u64,
    pub training: TrainingState,
    /// Run settings used to produce the model (free-form, written by the CLI).
    #[serde(default)]
    pub run: serde_json::Value,
}

pub fn save_model(dir: &Path, params: &ModelParams, meta: &ModelMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, m) in params.iter() {
        m.save_csv(&dir.join(format!("{}.csv", id.file_stem())))?;
    }
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
}

pub fn load_model(dir: &Path) -> Result<(ModelParams, ModelMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: meta_path.clone(),
        msg: e.to_string(),
    })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            path: meta_path,
            msg: format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            ),
        });
    }
    let mut values = BTreeMap::new();
    for (id, _) in ModelParams::layout(&meta.config, meta.num_samples) {
        let path = dir.join(format!("{}.csv", id.file_stem()));
        values.insert(id, Matrix::load_csv(&path)?);
    }
    let params = ModelParams::from_map(&meta.config, meta.num_samples, values)?;
    Ok((params, meta))
}
