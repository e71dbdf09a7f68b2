use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of primitives a tape can record.
#[derive(Debug, Clone)]
pub enum Op<K> {
    Param(K),
    Constant,
    MatMul(NodeId, NodeId),
    /// `x + b 1^T` for `x: r x n`, `b: r x 1`.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// Softmax down each column (over the stacked rows).
    SoftmaxCols(NodeId),
    StackRows(Vec<NodeId>),
    SelectRows { src: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    SelectCols { src: NodeId, start: usize, len: usize },
    FrobeniusSq(NodeId),
    AbsSum(NodeId),
    /// Copy with the diagonal forced to zero.
    ZeroDiag(NodeId),
}

#[derive(Debug, Clone)]
struct Node<K> {
    op: Op<K>,
    value: Matrix,
}

/// Gradient of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<K: Ord>(BTreeMap<K, Matrix>);

impl<K: Ord> Gradients<K> {
    pub fn get(&self, key: &K) -> Option<&Matrix> {
        self.0.get(key)
    }

    pub fn get_mut(&mut self, key: &K) -> Option<&mut Matrix> {
        self.0.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &Matrix)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<K, Matrix> {
        self.0
    }
}

/// Reverse-mode tape. Values are computed eagerly as nodes are pushed, so
/// every node's inputs precede it.
#[derive(Debug, Clone)]
pub struct Tape<K> {
    nodes: Vec<Node<K>>,
    params: BTreeMap<K, NodeId>,
}

impl<K: Ord + Clone> Default for Tape<K> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::invalid(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
}

impl<K: Ord + Clone> Tape<K> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.get(0, 0)
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op<K>) -> Result<NodeId> {
        let value = self.eval(&op)?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Registers a trainable leaf. Registering the same key again returns
    /// the existing node.
    pub fn param(&mut self, key: K, value: Matrix) -> NodeId {
        if let Some(&id) = self.params.get(&key) {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(key.clone()),
            value,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(key, id);
        id
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param_node(&self, key: &K) -> Option<NodeId> {
        self.params.get(key).copied()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn softmax_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftmaxCols(a))
    }

    pub fn stack_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::StackRows(parts))
    }

    pub fn select_rows(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SelectRows { src, start, len })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::ConcatCols(parts))
    }

    pub fn select_cols(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SelectCols { src, start, len })
    }

    pub fn frobenius_sq(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::FrobeniusSq(a))
    }

    pub fn abs_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::AbsSum(a))
    }

    pub fn zero_diag(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::ZeroDiag(a))
    }

    /// Sum of all entries, as `1^T a 1` with constant ones.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let left = self.constant(Matrix::filled(1, r, 1.0));
        let right = self.constant(Matrix::filled(c, 1, 1.0));
        let row = self.matmul(left, a)?;
        self.matmul(row, right)
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let ones = self.constant(Matrix::filled(rows, 1, 1.0));
        self.matmul(ones, a)
    }

    /// Column sums as a `1 x n` row.
    pub fn col_sums(&mut self, a: NodeId) -> Result<NodeId> {
        let r = self.shape(a).0;
        let ones = self.constant(Matrix::filled(1, r, 1.0));
        self.matmul(ones, a)
    }

    /// Replaces a parameter leaf's value. Call [`Tape::recompute`] to refresh
    /// downstream nodes.
    pub fn set_param(&mut self, key: &K, value: Matrix) -> Result<()> {
        let id = self
            .param_node(key)
            .ok_or_else(|| Error::invalid("set_param: unknown parameter"))?;
        if self.nodes[id.0].value.shape() != value.shape() {
            return Err(shape_err(
                "set_param",
                self.nodes[id.0].value.shape(),
                value.shape(),
            ));
        }
        self.nodes[id.0].value = value;
        Ok(())
    }

    /// Re-evaluates every non-leaf node in tape order.
    pub fn recompute(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Param(_) | Op::Constant) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op)?;
        }
        Ok(())
    }

    fn eval(&self, op: &Op<K>) -> Result<Matrix> {
        let v = |id: &NodeId| -> Result<&Matrix> {
            self.nodes
                .get(id.0)
                .map(|n| &n.value)
                .ok_or_else(|| Error::invalid("reference to a node not on this tape"))
        };
        Ok(match op {
            Op::Param(_) | Op::Constant => unreachable!("leaves carry their own value"),
            Op::MatMul(a, b) => v(a)?.matmul(v(b)?)?,
            Op::AddBias(x, b) => {
                let (x, b) = (v(x)?, v(b)?);
                if b.cols() != 1 || b.rows() != x.rows() {
                    return Err(shape_err("add_bias", x.shape(), b.shape()));
                }
                let mut out = x.clone();
                for i in 0..x.rows() {
                    let bi = b.get(i, 0);
                    out.row_mut(i).iter_mut().for_each(|e| *e += bi);
                }
                out
            }
            Op::Add(a, b) => v(a)?.add(v(b)?)?,
            Op::Sub(a, b) => v(a)?.sub(v(b)?)?,
            Op::Mul(a, b) => v(a)?.hadamard(v(b)?)?,
            Op::Scale(a, s) => v(a)?.scale(*s),
            Op::Relu(a) => v(a)?.map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::SoftmaxCols(a) => softmax_cols(v(a)?),
            Op::StackRows(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("stack_rows: no inputs"));
                }
                let cols = v(&parts[0])?.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let m = v(p)?;
                    if m.cols() != cols {
                        return Err(shape_err("stack_rows", (rows, cols), m.shape()));
                    }
                    rows += m.rows();
                    data.extend_from_slice(m.as_slice());
                }
                Matrix::from_vec(rows, cols, data)?
            }
            Op::SelectRows { src, start, len } => {
                let m = v(src)?;
                if start + len > m.rows() {
                    return Err(Error::invalid(format!(
                        "select_rows {start}..{} out of range for {} rows",
                        start + len,
                        m.rows()
                    )));
                }
                m.select_rows(*start, *len)
            }
            Op::ConcatCols(parts) => {
                if parts.is_empty() {
                    return Err(Error::invalid("concat_cols: no inputs"));
                }
                let rows = v(&parts[0])?.rows();
                let mut total = 0;
                for p in parts {
                    let m = v(p)?;
                    if m.rows() != rows {
                        return Err(shape_err("concat_cols", (rows, total), m.shape()));
                    }
                    total += m.cols();
                }
                let mut out = Matrix::zeros(rows, total);
                let mut offset = 0;
                for p in parts {
                    let m = v(p)?;
                    for i in 0..rows {
                        out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
                    }
                    offset += m.cols();
                }
                out
            }
            Op::SelectCols { src, start, len } => {
                let m = v(src)?;
                if start + len > m.cols() {
                    return Err(Error::invalid(format!(
                        "select_cols {start}..{} out of range for {} cols",
                        start + len,
                        m.cols()
                    )));
                }
                m.select_columns(*start, *len)
            }
            Op::FrobeniusSq(a) => Matrix::filled(1, 1, v(a)?.frobenius_sq()),
            Op::AbsSum(a) => Matrix::filled(1, 1, v(a)?.as_slice().iter().map(|x| x.abs()).sum()),
            Op::ZeroDiag(a) => {
                let m = v(a)?;
                if !m.is_square() {
                    return Err(Error::invalid("zero_diag needs a square matrix"));
                }
                let mut out = m.clone();
                out.zero_diagonal();
                out
            }
        })
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<K>> {
        self.backward_seeded(loss, 1.0)
    }

    /// As [`Tape::backward`] with upstream gradient `seed` at the loss.
    pub fn backward_seeded(&self, loss: NodeId, seed: f64) -> Result<Gradients<K>> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::filled(1, 1, seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(_) | Op::Constant => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.row_sums();
                    accumulate(&mut adj, *x, g);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.scale(-1.0);
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, neg);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                    accumulate(&mut adj, *a, ga);
                }
                Op::SoftmaxCols(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for j in 0..y.cols() {
                        let dot: f64 = (0..y.rows()).map(|r| g.get(r, j) * y.get(r, j)).sum();
                        for r in 0..y.rows() {
                            ga.set(r, j, y.get(r, j) * (g.get(r, j) - dot));
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        accumulate(&mut adj, *p, g.select_rows(offset, rows));
                        offset += rows;
                    }
                }
                Op::SelectRows { src, start, len } => {
                    let (r, c) = self.shape(*src);
                    let mut gs = Matrix::zeros(r, c);
                    for i in 0..*len {
                        gs.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        accumulate(&mut adj, *p, g.select_columns(offset, cols));
                        offset += cols;
                    }
                }
                Op::SelectCols { src, start, len } => {
                    let (r, c) = self.shape(*src);
                    let mut gs = Matrix::zeros(r, c);
                    for i in 0..r {
                        gs.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::FrobeniusSq(a) => {
                    let s = 2.0 * g.get(0, 0);
                    accumulate(&mut adj, *a, self.value(*a).scale(s));
                }
                Op::AbsSum(a) => {
                    let s = g.get(0, 0);
                    let ga = self.value(*a).map(|x| {
                        if x > 0.0 {
                            s
                        } else if x < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::ZeroDiag(a) => {
                    let mut ga = g;
                    ga.zero_diagonal();
                    accumulate(&mut adj, *a, ga);
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|(k, id)| {
                let g = adj[id.0].take().unwrap_or_else(|| {
                    let (r, c) = self.shape(*id);
                    Matrix::zeros(r, c)
                });
                (k.clone(), g)
            })
            .collect();
        Ok(Gradients(grads))
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g).expect("adjoint shapes match node shapes"),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_cols(a: &Matrix) -> Matrix {
    let (r, c) = a.shape();
    let mut out = Matrix::zeros(r, c);
    for j in 0..c {
        let max = (0..r).map(|i| a.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for i in 0..r {
            let e = (a.get(i, j) - max).exp();
            out.set(i, j, e);
            denom += e;
        }
        for i in 0..r {
            out.set(i, j, out.get(i, j) / denom);
        }
    }
    out
}
