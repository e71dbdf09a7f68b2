//! The training objective.
//!
//! Reconstruction part, summed over views `v`:
//! `1/(2NM) ||X^v - Xhat^v||_F^2 + beta2 * Omega(encoder/decoder weights)`.
//!
//! Self-representation part:
//! `sum_v [1/(2N) ||H_sr^v - H^v||_F^2 + c_fro ||C^v||_F^2]`.
//!
//! Alignment part, over ordered pairs:
//! `beta1 * sum_{v != w} 1/(2N) ||C^v - C^w||_F^2`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{ForwardNodes, ForwardState, ModelParams, ParamId};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OmegaKind {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Alignment trade-off between views' `C`.
    pub beta1: f64,
    /// Encoder/decoder weight regularizer trade-off.
    pub beta2: f64,
    pub omega: OmegaKind,
    /// Coefficient on `||C^v||_F^2`.
    pub c_fro_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 0.1,
            beta2: 0.1,
            omega: OmegaKind::L2,
            c_fro_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("c_fro_weight", self.c_fro_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Loss terms as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Reconstruction error plus the weight regularizer.
    pub recon: f64,
    /// Self-representation residual plus `||C||_F^2`, without alignment.
    pub selfrep: f64,
    pub align: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("reconstruction", self.recon),
            ("self-representation", self.selfrep),
            ("alignment", self.align),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Tape nodes of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub recon: NodeId,
    pub selfrep: NodeId,
    pub align: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, tape: &Tape<ParamId>) -> LossBreakdown {
        LossBreakdown {
            total: tape.scalar(self.total),
            recon: tape.scalar(self.recon),
            selfrep: tape.scalar(self.selfrep),
            align: tape.scalar(self.align),
        }
    }
}

fn sum_nodes(tape: &mut Tape<ParamId>, terms: Vec<NodeId>) -> Result<NodeId> {
    let mut it = terms.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    };
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Records the loss of a forward pass on `tape`.
pub fn build_loss(
    tape: &mut Tape<ParamId>,
    fwd: &ForwardNodes,
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<LossNodes> {
    let m = fwd.inputs.len();
    let n = params.num_samples() as f64;

    let mut recon_terms = Vec::with_capacity(m + 1);
    for v in 0..m {
        let diff = tape.sub(fwd.inputs[v], fwd.x_hat[v])?;
        let sq = tape.frobenius_sq(diff)?;
        recon_terms.push(tape.scale(sq, 1.0 / (2.0 * n * m as f64))?);
    }
    let mut omega_terms = Vec::new();
    for (id, &node) in &fwd.params {
        if !id.is_autoencoder_weight() {
            continue;
        }
        omega_terms.push(match weights.omega {
            OmegaKind::L2 => tape.frobenius_sq(node)?,
            OmegaKind::L1 => tape.abs_sum(node)?,
        });
    }
    let omega = sum_nodes(tape, omega_terms)?;
    recon_terms.push(tape.scale(omega, weights.beta2)?);
    let recon = sum_nodes(tape, recon_terms)?;

    let mut selfrep_terms = Vec::with_capacity(2 * m);
    for v in 0..m {
        let diff = tape.sub(fwd.h_sr[v], fwd.attention.context[v])?;
        let sq = tape.frobenius_sq(diff)?;
        selfrep_terms.push(tape.scale(sq, 1.0 / (2.0 * n))?);
        let c_sq = tape.frobenius_sq(fwd.self_rep[v])?;
        selfrep_terms.push(tape.scale(c_sq, weights.c_fro_weight)?);
    }
    let selfrep = sum_nodes(tape, selfrep_terms)?;

    // Ordered pairs: each unordered pair counted twice.
    let mut align_terms = Vec::new();
    for v in 0..m {
        for w in (v + 1)..m {
            let diff = tape.sub(fwd.self_rep[v], fwd.self_rep[w])?;
            let sq = tape.frobenius_sq(diff)?;
            align_terms.push(tape.scale(sq, 2.0 / (2.0 * n))?);
        }
    }
    let align_sum = sum_nodes(tape, align_terms)?;
    let align = tape.scale(align_sum, weights.beta1)?;

    let rs = tape.add(recon, selfrep)?;
    let total = tape.add(rs, align)?;
    Ok(LossNodes {
        total,
        recon,
        selfrep,
        align,
    })
}

fn omega_value(params: &ModelParams, kind: OmegaKind) -> f64 {
    params
        .iter()
        .filter(|(id, _)| id.is_autoencoder_weight())
        .map(|(_, m)| match kind {
            OmegaKind::L2 => m.frobenius_sq(),
            OmegaKind::L1 => m.as_slice().iter().map(|x| x.abs()).sum(),
        })
        .sum()
}

/// Reconstruction part of the loss, including the weight regularizer.
pub fn reconstruction_loss(
    x: &[Matrix],
    x_hat: &[Matrix],
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::invalid("reconstruction_loss: view counts differ or are zero"));
    }
    let m = x.len() as f64;
    let mut total = 0.0;
    for (v, (a, b)) in x.iter().zip(x_hat).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::invalid(format!("reconstruction_loss: view {v} shape mismatch")));
        }
        let n = a.cols() as f64;
        total += a.sub(b)?.frobenius_sq() / (2.0 * n * m);
    }
    Ok(total + weights.beta2 * omega_value(params, weights.omega))
}

/// Self-representation part of the loss as `(residual + C norm, alignment)`.
pub fn selfrep_terms(
    h: &[Matrix],
    h_sr: &[Matrix],
    c: &[Matrix],
    weights: &LossWeights,
) -> Result<(f64, f64)> {
    let m = h.len();
    if h_sr.len() != m || c.len() != m {
        return Err(Error::invalid("selfrep_loss: view counts differ"));
    }
    let mut residual = 0.0;
    for v in 0..m {
        if c[v].diagonal().iter().any(|&d| d != 0.0) {
            return Err(Error::Invariant(format!("C of view {v} has a nonzero diagonal")));
        }
        let n = c[v].rows() as f64;
        residual += h_sr[v].sub(&h[v])?.frobenius_sq() / (2.0 * n);
        residual += weights.c_fro_weight * c[v].frobenius_sq();
    }
    let mut align = 0.0;
    for v in 0..m {
        for w in 0..m {
            if v != w {
                let n = c[v].rows() as f64;
                align += c[v].sub(&c[w])?.frobenius_sq() / (2.0 * n);
            }
        }
    }
    Ok((residual, weights.beta1 * align))
}

pub fn selfrep_loss(h: &[Matrix], h_sr: &[Matrix], c: &[Matrix], weights: &LossWeights) -> Result<f64> {
    let (a, b) = selfrep_terms(h, h_sr, c, weights)?;
    Ok(a + b)
}

/// Loss of a completed forward pass, computed directly from its values.
pub fn total_loss(
    state: &ForwardState,
    x: &[Matrix],
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let x_hat: Vec<Matrix> = state.views.iter().map(|s| s.x_hat.clone()).collect();
    let h: Vec<Matrix> = state.views.iter().map(|s| s.h.clone()).collect();
    let h_sr: Vec<Matrix> = state.views.iter().map(|s| s.h_sr.clone()).collect();
    let c: Vec<Matrix> = (0..state.views.len())
        .map(|v| params.self_rep(v).clone())
        .collect();
    let recon = reconstruction_loss(x, &x_hat, params, weights)?;
    let (selfrep, align) = selfrep_terms(&h, &h_sr, &c, weights)?;
    let out = LossBreakdown {
        total: recon + selfrep + align,
        recon,
        selfrep,
        align,
    };
    if let Some(term) = out.non_finite_term() {
        return Err(Error::NonFinite(format!("{term} loss term")));
    }
    Ok(out)
}
