use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamId};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            decay: 0.99,
            beta_a: 0.9,
            beta_b: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `base_lr * decay^epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && self.base_lr.is_finite()
            && self.decay > 0.0
            && self.decay <= 1.0
            && (0.0..1.0).contains(&self.beta_a)
            && (0.0..1.0).contains(&self.beta_b)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "optimizer settings out of range: {self:?} (need lr > 0, 0 < decay <= 1, \
                 0 <= betas < 1, eps > 0)"
            )))
        }
    }
}

/// Adam moments for every parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    moments: BTreeMap<ParamId, (Matrix, Matrix)>,
    timestep: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        let moments = params
            .iter()
            .map(|(id, m)| {
                let z = Matrix::zeros(m.rows(), m.cols());
                (*id, (z.clone(), z))
            })
            .collect();
        Self {
            config,
            moments,
            timestep: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam step with learning rate `lr`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients<ParamId>, lr: f64) -> Result<()> {
        self.timestep += 1;
        let t = self.timestep as i32;
        let (ba, bb, eps) = (self.config.beta_a, self.config.beta_b, self.config.eps);
        let corr_a = 1.0 - ba.powi(t);
        let corr_b = 1.0 - bb.powi(t);
        for (id, p) in params.iter_mut() {
            let g = grads
                .get(id)
                .ok_or_else(|| Error::Invariant(format!("no gradient for {id}")))?;
            let (m, v) = self
                .moments
                .get_mut(id)
                .ok_or_else(|| Error::Invariant(format!("no optimizer state for {id}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Invariant(format!("gradient shape mismatch for {id}")));
            }
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (((pi, mi), vi), &gi) in ps.iter_mut().zip(ms).zip(vs).zip(g.as_slice()) {
                *mi = ba * *mi + (1.0 - ba) * gi;
                *vi = bb * *vi + (1.0 - bb) * gi * gi;
                let m_hat = *mi / corr_a;
                let v_hat = *vi / corr_b;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
