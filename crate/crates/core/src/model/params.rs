use std::collections::BTreeMap;
use std::fmt;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::{lecun_normal_init, Matrix, SeededRng};

/// Identifies one trainable matrix. Views and layers are 0-based here;
/// on-disk file names use 1-based layer numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    EncoderWeight { view: usize, layer: usize },
    EncoderBias { view: usize, layer: usize },
    /// 0 = query, 1 = key, 2 = value.
    Attention(usize),
    SelfRep { view: usize },
    DecoderWeight { view: usize, layer: usize },
    DecoderBias { view: usize, layer: usize },
}

impl ParamId {
    pub fn file_stem(&self) -> String {
        match *self {
            ParamId::EncoderWeight { view, layer } => format!("W1_{view}_{}", layer + 1),
            ParamId::EncoderBias { view, layer } => format!("b1_{view}_{}", layer + 1),
            ParamId::Attention(i) => format!("W2_{}", i + 1),
            ParamId::SelfRep { view } => format!("C_{view}"),
            ParamId::DecoderWeight { view, layer } => format!("W3_{view}_{}", layer + 1),
            ParamId::DecoderBias { view, layer } => format!("b2_{view}_{}", layer + 1),
        }
    }

    /// Weight matrices penalized by the encoder/decoder regularizer.
    pub fn is_autoencoder_weight(&self) -> bool {
        matches!(
            self,
            ParamId::EncoderWeight { .. } | ParamId::DecoderWeight { .. }
        )
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_stem())
    }
}

/// One fully connected layer, `y = W x + b 1^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Shared query/key/value transforms, each `R x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

/// Every trainable matrix of the network for a fixed sample count `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    num_samples: usize,
    values: BTreeMap<ParamId, Matrix>,
}

impl ModelParams {
    /// All expected parameter ids with their shapes.
    pub fn layout(config: &ModelConfig, num_samples: usize) -> Vec<(ParamId, (usize, usize))> {
        let mut out = Vec::new();
        let r = config.common_dim;
        for view in 0..config.num_views() {
            for layer in 0..config.encoder_layers {
                let shape = config.encoder_shape(view, layer);
                out.push((ParamId::EncoderWeight { view, layer }, shape));
                out.push((ParamId::EncoderBias { view, layer }, (shape.0, 1)));
            }
            for layer in 0..config.decoder_layers {
                let shape = config.decoder_shape(view, layer);
                out.push((ParamId::DecoderWeight { view, layer }, shape));
                out.push((ParamId::DecoderBias { view, layer }, (shape.0, 1)));
            }
            out.push((ParamId::SelfRep { view }, (num_samples, num_samples)));
        }
        for i in 0..3 {
            out.push((ParamId::Attention(i), (r, r)));
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// LeCun-normal weights, zero biases, zero self-representation.
    pub fn init(config: &ModelConfig, num_samples: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if num_samples == 0 {
            return Err(Error::invalid("model needs at least one sample"));
        }
        let mut values = BTreeMap::new();
        for (id, (rows, cols)) in Self::layout(config, num_samples) {
            let m = match id {
                ParamId::EncoderWeight { .. }
                | ParamId::DecoderWeight { .. }
                | ParamId::Attention(_) => lecun_normal_init(rng, rows, cols, cols)?,
                _ => Matrix::zeros(rows, cols),
            };
            values.insert(id, m);
        }
        Ok(Self {
            config: config.clone(),
            num_samples,
            values,
        })
    }

    /// Assembles parameters from a full map, checking ids, shapes, finiteness
    /// and the zero diagonal of every `C`.
    pub fn from_map(
        config: &ModelConfig,
        num_samples: usize,
        values: BTreeMap<ParamId, Matrix>,
    ) -> Result<Self> {
        Self::assemble(config, num_samples, values, true)
    }

    /// As [`ModelParams::from_map`] but tolerates nonzero diagonals in `C`.
    /// Only for finite-difference probing: the forward pass masks the
    /// diagonal, so such entries never influence the loss.
    pub(crate) fn from_map_allow_diagonal(
        config: &ModelConfig,
        num_samples: usize,
        values: BTreeMap<ParamId, Matrix>,
    ) -> Result<Self> {
        Self::assemble(config, num_samples, values, false)
    }

    fn assemble(
        config: &ModelConfig,
        num_samples: usize,
        mut values: BTreeMap<ParamId, Matrix>,
        check_diagonal: bool,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(config, num_samples);
        if values.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter matrices, got {}",
                layout.len(),
                values.len()
            )));
        }
        for (id, shape) in &layout {
            let m = values
                .get_mut(id)
                .ok_or_else(|| Error::invalid(format!("missing parameter {id}")))?;
            if m.shape() != *shape {
                return Err(Error::invalid(format!(
                    "parameter {id}: expected {}x{}, got {}x{}",
                    shape.0,
                    shape.1,
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("parameter {id}")));
            }
            if check_diagonal
                && matches!(id, ParamId::SelfRep { .. })
                && m.diagonal().iter().any(|&d| d != 0.0) {
                return Err(Error::Invariant(format!("parameter {id} has a nonzero diagonal")));
            }
        }
        Ok(Self {
            config: config.clone(),
            num_samples,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[&id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.values.get_mut(&id).expect("parameter id from layout")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamId, &mut Matrix)> {
        self.values.iter_mut()
    }

    pub fn as_map(&self) -> &BTreeMap<ParamId, Matrix> {
        &self.values
    }

    pub fn self_rep(&self, view: usize) -> &Matrix {
        self.get(ParamId::SelfRep { view })
    }

    pub fn encoder(&self, view: usize) -> Vec<DenseLayer> {
        (0..self.config.encoder_layers)
            .map(|layer| DenseLayer {
                weight: self.get(ParamId::EncoderWeight { view, layer }).clone(),
                bias: self.get(ParamId::EncoderBias { view, layer }).clone(),
            })
            .collect()
    }

    pub fn decoder(&self, view: usize) -> Vec<DenseLayer> {
        (0..self.config.decoder_layers)
            .map(|layer| DenseLayer {
                weight: self.get(ParamId::DecoderWeight { view, layer }).clone(),
                bias: self.get(ParamId::DecoderBias { view, layer }).clone(),
            })
            .collect()
    }

    pub fn attention(&self) -> AttentionParams {
        AttentionParams {
            query: self.get(ParamId::Attention(0)).clone(),
            key: self.get(ParamId::Attention(1)).clone(),
            value: self.get(ParamId::Attention(2)).clone(),
        }
    }

    /// Forces `diag(C^v) = 0` for every view.
    pub fn zero_self_rep_diagonals(&mut self) {
        for view in 0..self.config.num_views() {
            self.get_mut(ParamId::SelfRep { view }).zero_diagonal();
        }
    }

    pub fn self_rep_diagonals_are_zero(&self) -> bool {
        (0..self.config.num_views())
            .all(|view| self.self_rep(view).diagonal().iter().all(|&d| d == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.values.values().all(Matrix::is_finite)
    }
}
