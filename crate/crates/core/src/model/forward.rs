use std::collections::BTreeMap;

use super::{AttentionMode, AttentionParams, DenseLayer, ModelParams, ParamId};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Tape nodes of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Tape nodes of the attention transforms.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub query: NodeId,
    pub key: NodeId,
    pub value: NodeId,
}

/// Per-view results of the attention stage.
#[derive(Debug, Clone)]
pub struct AttendOutput {
    pub query: Vec<NodeId>,
    pub key: Vec<NodeId>,
    pub value: Vec<NodeId>,
    /// `1 x N` own-view weights `a^v`.
    pub weights: Vec<NodeId>,
    /// `M x N` softmax over views for each view's queries.
    pub weight_table: Vec<NodeId>,
    pub context: Vec<NodeId>,
}

/// `f(W x + b)` per layer; layers after the first add `x` back when
/// `residual` is set.
pub fn encode_nodes<K: Ord + Clone>(
    tape: &mut Tape<K>,
    x: NodeId,
    layers: &[LayerNodes],
    residual: bool,
) -> Result<NodeId> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let out = dense_relu(tape, h, layer)?;
        h = if residual && i > 0 { tape.add(out, h)? } else { out };
    }
    Ok(h)
}

/// Mirror of [`encode_nodes`]: every layer but the last is square and takes
/// the residual; the last maps to the view's feature dimension.
pub fn decode_nodes<K: Ord + Clone>(
    tape: &mut Tape<K>,
    h_sr: NodeId,
    layers: &[LayerNodes],
    residual: bool,
) -> Result<NodeId> {
    let mut h = h_sr;
    let last = layers.len().saturating_sub(1);
    for (i, layer) in layers.iter().enumerate() {
        let out = dense_relu(tape, h, layer)?;
        h = if residual && i < last { tape.add(out, h)? } else { out };
    }
    Ok(h)
}

fn dense_relu<K: Ord + Clone>(tape: &mut Tape<K>, x: NodeId, layer: &LayerNodes) -> Result<NodeId> {
    let wx = tape.matmul(layer.weight, x)?;
    let pre = tape.add_bias(wx, layer.bias)?;
    tape.relu(pre)
}

/// Query/key/value projections, cross-view alignment weights and context
/// vectors for every view.
///
/// For sample `i` of view `v` the scores are `q_i^v . k_i^j` over all views
/// `j`; the softmax of those scores gives `a_i^{v,j}` and `a_i^v =
/// a_i^{v,v}`.
pub fn attend_nodes<K: Ord + Clone>(
    tape: &mut Tape<K>,
    z: &[NodeId],
    attn: AttentionNodes,
    mode: AttentionMode,
) -> Result<AttendOutput> {
    if z.is_empty() {
        return Err(Error::invalid("attend needs at least one view"));
    }
    let shape = tape.shape(z[0]);
    if let Some(v) = z.iter().position(|&n| tape.shape(n) != shape) {
        let (r, c) = tape.shape(z[v]);
        return Err(Error::invalid(format!(
            "attend: view {v} is {r}x{c}, view 0 is {}x{}",
            shape.0, shape.1
        )));
    }
    let rows = shape.0;
    let m = z.len();
    let mut query = Vec::with_capacity(m);
    let mut key = Vec::with_capacity(m);
    let mut value = Vec::with_capacity(m);
    for &zv in z {
        query.push(tape.matmul(attn.query, zv)?);
        key.push(tape.matmul(attn.key, zv)?);
        value.push(tape.matmul(attn.value, zv)?);
    }

    let mut out = AttendOutput {
        query,
        key,
        value,
        weights: Vec::with_capacity(m),
        weight_table: Vec::with_capacity(m),
        context: Vec::with_capacity(m),
    };
    for v in 0..m {
        let mut scores = Vec::with_capacity(m);
        for j in 0..m {
            let qk = tape.mul(out.query[v], out.key[j])?;
            scores.push(tape.col_sums(qk)?);
        }
        let stacked = tape.stack_rows(scores)?;
        let table = tape.softmax_cols(stacked)?;
        let own = tape.select_rows(table, v, 1)?;
        let context = match mode {
            AttentionMode::Paper => {
                let a = tape.broadcast_row(own, rows)?;
                tape.mul(a, out.value[v])?
            }
            AttentionMode::Mixed => {
                let mut acc = None;
                for j in 0..m {
                    let w = tape.select_rows(table, j, 1)?;
                    let a = tape.broadcast_row(w, rows)?;
                    let term = tape.mul(a, out.value[j])?;
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => tape.add(prev, term)?,
                    });
                }
                acc.expect("m >= 1")
            }
        };
        out.weights.push(own);
        out.weight_table.push(table);
        out.context.push(context);
    }
    Ok(out)
}

/// `(C_masked, H C_masked)` with the diagonal of `C` masked to zero.
pub fn self_represent_nodes<K: Ord + Clone>(
    tape: &mut Tape<K>,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let masked = tape.zero_diag(c)?;
    let h_sr = tape.matmul(h, masked)?;
    Ok((masked, h_sr))
}

/// Node ids of one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub inputs: Vec<NodeId>,
    pub z: Vec<NodeId>,
    pub attention: AttendOutput,
    pub self_rep: Vec<NodeId>,
    pub h_sr: Vec<NodeId>,
    pub x_hat: Vec<NodeId>,
    pub params: BTreeMap<ParamId, NodeId>,
}

fn check_views(views: &[Matrix], params: &ModelParams) -> Result<()> {
    let cfg = params.config();
    if views.len() != cfg.num_views() {
        return Err(Error::invalid(format!(
            "model has {} views, data has {}",
            cfg.num_views(),
            views.len()
        )));
    }
    for (v, x) in views.iter().enumerate() {
        if x.rows() != cfg.feature_dims[v] {
            return Err(Error::invalid(format!(
                "view {v}: model expects {} features, data has {}",
                cfg.feature_dims[v],
                x.rows()
            )));
        }
        if x.cols() != params.num_samples() {
            return Err(Error::invalid(format!(
                "view {v}: model expects {} samples, data has {}",
                params.num_samples(),
                x.cols()
            )));
        }
    }
    Ok(())
}

/// Records encode -> attend -> self-represent -> decode for all views. Data
/// enters as constants, every parameter as a leaf.
pub fn build_forward(
    tape: &mut Tape<ParamId>,
    views: &[Matrix],
    params: &ModelParams,
) -> Result<ForwardNodes> {
    check_views(views, params)?;
    let cfg = params.config();
    let ids: BTreeMap<ParamId, NodeId> = params
        .iter()
        .map(|(id, m)| (*id, tape.param(*id, m.clone())))
        .collect();
    let layer = |w: ParamId, b: ParamId| LayerNodes {
        weight: ids[&w],
        bias: ids[&b],
    };

    let inputs: Vec<NodeId> = views.iter().map(|x| tape.constant(x.clone())).collect();
    let mut z = Vec::with_capacity(views.len());
    for (view, &x) in inputs.iter().enumerate() {
        let layers: Vec<LayerNodes> = (0..cfg.encoder_layers)
            .map(|l| {
                layer(
                    ParamId::EncoderWeight { view, layer: l },
                    ParamId::EncoderBias { view, layer: l },
                )
            })
            .collect();
        z.push(encode_nodes(tape, x, &layers, cfg.residual)?);
    }
    let attn = AttentionNodes {
        query: ids[&ParamId::Attention(0)],
        key: ids[&ParamId::Attention(1)],
        value: ids[&ParamId::Attention(2)],
    };
    let attention = attend_nodes(tape, &z, attn, cfg.attention_mode)?;

    let mut self_rep = Vec::new();
    let mut h_sr = Vec::new();
    let mut x_hat = Vec::new();
    for view in 0..views.len() {
        let (c, hs) =
            self_represent_nodes(tape, attention.context[view], ids[&ParamId::SelfRep { view }])?;
        let layers: Vec<LayerNodes> = (0..cfg.decoder_layers)
            .map(|l| {
                layer(
                    ParamId::DecoderWeight { view, layer: l },
                    ParamId::DecoderBias { view, layer: l },
                )
            })
            .collect();
        x_hat.push(decode_nodes(tape, hs, &layers, cfg.residual)?);
        self_rep.push(c);
        h_sr.push(hs);
    }
    Ok(ForwardNodes {
        inputs,
        z,
        attention,
        self_rep,
        h_sr,
        x_hat,
        params: ids,
    })
}

/// Per-view intermediates of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewState {
    pub z: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// `1 x N`.
    pub weights: Matrix,
    pub h: Matrix,
    pub h_sr: Matrix,
    pub x_hat: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub views: Vec<ViewState>,
}

impl ForwardState {
    pub fn from_tape(tape: &Tape<ParamId>, nodes: &ForwardNodes) -> Self {
        let views = (0..nodes.z.len())
            .map(|v| ViewState {
                z: tape.value(nodes.z[v]).clone(),
                q: tape.value(nodes.attention.query[v]).clone(),
                k: tape.value(nodes.attention.key[v]).clone(),
                v: tape.value(nodes.attention.value[v]).clone(),
                weights: tape.value(nodes.attention.weights[v]).clone(),
                h: tape.value(nodes.attention.context[v]).clone(),
                h_sr: tape.value(nodes.h_sr[v]).clone(),
                x_hat: tape.value(nodes.x_hat[v]).clone(),
            })
            .collect();
        Self { views }
    }
}

/// Full forward pass over the views (each `F^v x N`).
pub fn forward(views: &[Matrix], params: &ModelParams) -> Result<ForwardState> {
    let mut tape = Tape::new();
    let nodes = build_forward(&mut tape, views, params)?;
    Ok(ForwardState::from_tape(&tape, &nodes))
}

fn layer_constants(tape: &mut Tape<()>, layers: &[DenseLayer]) -> Vec<LayerNodes> {
    layers
        .iter()
        .map(|l| LayerNodes {
            weight: tape.constant(l.weight.clone()),
            bias: tape.constant(l.bias.clone()),
        })
        .collect()
}

/// Encoder stack applied to `x` (`F x N`), giving `R x N`.
pub fn encode(x: &Matrix, layers: &[DenseLayer], residual: bool) -> Result<Matrix> {
    if x.cols() == 0 {
        return Err(Error::invalid("encode needs at least one sample"));
    }
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let nodes = layer_constants(&mut tape, layers);
    let out = encode_nodes(&mut tape, xn, &nodes, residual)?;
    Ok(tape.value(out).clone())
}

/// Decoder stack applied to `h_sr` (`R x N`).
pub fn decode(h_sr: &Matrix, layers: &[DenseLayer], residual: bool) -> Result<Matrix> {
    let mut tape = Tape::new();
    let hn = tape.constant(h_sr.clone());
    let nodes = layer_constants(&mut tape, layers);
    let out = decode_nodes(&mut tape, hn, &nodes, residual)?;
    Ok(tape.value(out).clone())
}

/// Context vectors and own-view alignment weights for every view.
pub fn attend(
    z: &[Matrix],
    params: &AttentionParams,
    mode: AttentionMode,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let mut tape: Tape<()> = Tape::new();
    let zn: Vec<NodeId> = z.iter().map(|m| tape.constant(m.clone())).collect();
    let attn = AttentionNodes {
        query: tape.constant(params.query.clone()),
        key: tape.constant(params.key.clone()),
        value: tape.constant(params.value.clone()),
    };
    let out = attend_nodes(&mut tape, &zn, attn, mode)?;
    let h = out.context.iter().map(|&n| tape.value(n).clone()).collect();
    let a = out.weights.iter().map(|&n| tape.value(n).clone()).collect();
    Ok((h, a))
}

/// `H C`; `C` must already have a zero diagonal.
pub fn self_represent(h: &Matrix, c: &Matrix) -> Result<Matrix> {
    if !c.is_square() {
        return Err(Error::invalid("self-representation matrix must be square"));
    }
    if let Some(i) = c.diagonal().iter().position(|&d| d != 0.0) {
        return Err(Error::Invariant(format!(
            "self-representation matrix has nonzero diagonal at {i}"
        )));
    }
    h.matmul(c)
}
