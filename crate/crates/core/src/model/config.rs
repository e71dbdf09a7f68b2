use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How context vectors use the attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// `h_i^v = a_i^v v_i^v`: each view scales its own value vector.
    #[default]
    Paper,
    /// `h_i^v = sum_j a_i^{v,j} v_i^j`: values mixed across views.
    Mixed,
}

/// Architecture of the network. The activation is always ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dims: Vec<usize>,
    pub common_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub attention_mode: AttentionMode,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(feature_dims: Vec<usize>, common_dim: usize, layers: usize) -> Self {
        Self {
            feature_dims,
            common_dim,
            encoder_layers: layers,
            decoder_layers: layers,
            residual: true,
            attention_mode: AttentionMode::Paper,
        }
    }

    pub fn num_views(&self) -> usize {
        self.feature_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dims.is_empty() {
            return Err(Error::invalid("model needs at least one view"));
        }
        if let Some(v) = self.feature_dims.iter().position(|&f| f == 0) {
            return Err(Error::invalid(format!("view {v} has zero features")));
        }
        if self.common_dim == 0 {
            return Err(Error::invalid("common_dim must be >= 1"));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::invalid("encoder_layers and decoder_layers must be >= 1"));
        }
        Ok(())
    }

    /// `(out, in)` shape of encoder layer `layer` (0-based) of view `view`.
    pub fn encoder_shape(&self, view: usize, layer: usize) -> (usize, usize) {
        let r = self.common_dim;
        if layer == 0 {
            (r, self.feature_dims[view])
        } else {
            (r, r)
        }
    }

    /// `(out, in)` shape of decoder layer `layer` (0-based) of view `view`.
    pub fn decoder_shape(&self, view: usize, layer: usize) -> (usize, usize) {
        let r = self.common_dim;
        if layer + 1 == self.decoder_layers {
            (self.feature_dims[view], r)
        } else {
            (r, r)
        }
    }
}
