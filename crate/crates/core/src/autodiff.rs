//! Tape-style reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is rebuilt for every batch. Operations append nodes in
//! evaluation order, so append order is a topological order and
//! [`Graph::backward`] simply walks the tape from the loss down to the
//! first node. Nodes that cannot reach a trainable leaf are skipped.

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    SelectCols(NodeId, Vec<usize>),
    MergeCols(Vec<(NodeId, Vec<usize>)>),
    SumRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    LogSoftmax(NodeId),
    PickPerRow(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of the trainable leaves after a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf; `None` for any other node.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Moves out the gradients of `ids`, in order. Panics if any id is not a
    /// trainable leaf, which is a wiring bug.
    pub fn take_all(mut self, ids: &[NodeId]) -> Vec<Tensor> {
        ids.iter()
            .map(|id| {
                self.grads[id.0]
                    .take()
                    .expect("gradient requested for a node that is not a trainable leaf")
            })
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Trainable leaves receive gradients from `backward`.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// Binds a list of parameter tensors as leaves, preserving order.
    pub fn bind<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a Tensor>,
        trainable: bool,
    ) -> Vec<NodeId> {
        params
            .into_iter()
            .map(|t| self.leaf(t.clone(), trainable))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    /// Adds a constant to every element.
    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).tanh();
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).exp();
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).ln()?;
        Ok(self.push(v, Op::Log(a), &[a]))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a), &[a])
    }

    /// `[r,c] + [c]`, adding the vector to every row.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_rows(self.value(row), "add_row", |x, y| x + y)?;
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    /// `[r,c] ⊙ [c]`, scaling every row by the vector.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_rows(self.value(row), "mul_row", |x, y| x * y)?;
        Ok(self.push(v, Op::MulRow(a, row), &[a, row]))
    }

    pub fn select_cols(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let v = self.value(a).select_cols(cols)?;
        Ok(self.push(v, Op::SelectCols(a, cols.to_vec()), &[a]))
    }

    /// Interleaves column blocks back into a `[r, total]` matrix. Every output
    /// column must be covered exactly once.
    pub fn merge_cols(&mut self, parts: &[(NodeId, &[usize])], total: usize) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |(id, _)| self.value(*id).rows());
        let mut covered = vec![false; total];
        let mut data = vec![0.0; rows * total];
        for (id, cols) in parts {
            let part = self.value(*id);
            if part.rank() != 2 || part.rows() != rows || part.cols() != cols.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "merge_cols",
                    left: vec![rows, cols.len()],
                    right: part.shape().to_vec(),
                });
            }
            for &j in cols.iter() {
                if j >= total || covered[j] {
                    return Err(TensorError::Index {
                        op: "merge_cols",
                        index: j,
                        bound: total,
                    });
                }
                covered[j] = true;
            }
            for i in 0..rows {
                let src = part.row(i);
                for (k, &j) in cols.iter().enumerate() {
                    data[i * total + j] = src[k];
                }
            }
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(TensorError::Index {
                op: "merge_cols",
                index: missing,
                bound: total,
            });
        }
        let v = Tensor::new(vec![rows, total], data)?;
        let inputs: Vec<NodeId> = parts.iter().map(|(id, _)| *id).collect();
        let op = Op::MergeCols(parts.iter().map(|(id, c)| (*id, c.to_vec())).collect());
        Ok(self.push(v, op, &inputs))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).sum_rows()?;
        Ok(self.push(v, Op::SumRows(a), &[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a), &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).log_softmax_rows()?;
        Ok(self.push(v, Op::LogSoftmax(a), &[a]))
    }

    /// Picks `a[i, idx[i]]` for every row, giving `[r]`.
    pub fn pick_per_row(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || t.rows() != idx.len() {
            return Err(TensorError::ShapeMismatch {
                op: "pick_per_row",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let c = t.cols();
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(TensorError::Index {
                op: "pick_per_row",
                index: bad,
                bound: c,
            });
        }
        let v = Tensor::vector(idx.iter().enumerate().map(|(i, &j)| t.row(i)[j]).collect());
        Ok(self.push(v, Op::PickPerRow(a, idx.to_vec()), &[a]))
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets a
    /// gradient buffer (zero if the loss does not depend on it).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar_like() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if n.trainable {
                    Some(adj[i].take().unwrap_or_else(|| Tensor::zeros(n.value.shape())))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        if !self.wants(id) {
            return Ok(());
        }
        let target_shape = self.value(id).shape();
        // A scalar operand broadcast over a tensor receives the summed adjoint.
        let g = if g.shape() != target_shape {
            if self.value(id).is_scalar_like() {
                Tensor::full(target_shape, g.sum())
            } else {
                return Err(TensorError::ShapeMismatch {
                    op: "backward",
                    left: target_shape.to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        } else {
            g
        };
        match &mut adj[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(adj, *a, g.matmul_nt(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    self.accumulate(adj, *b, self.value(*a).matmul_tn(g)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone())?;
                self.accumulate(adj, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone())?;
                self.accumulate(adj, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(adj, *a, g.mul(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    self.accumulate(adj, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(adj, *a, g.scale(*c))?,
            Op::Tanh(a) => {
                let d = g.zip_with(&node.value, "tanh", |gi, y| gi * (1.0 - y * y))?;
                self.accumulate(adj, *a, d)?;
            }
            Op::Exp(a) => self.accumulate(adj, *a, g.mul(&node.value)?)?,
            Op::Log(a) => {
                let d = g.zip_with(self.value(*a), "log", |gi, x| gi / x)?;
                self.accumulate(adj, *a, d)?;
            }
            Op::Relu(a) => {
                let d = g.zip_with(self.value(*a), "relu", |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                self.accumulate(adj, *a, d)?;
            }
            Op::AddRow(a, row) => {
                self.accumulate(adj, *a, g.clone())?;
                if self.wants(*row) {
                    self.accumulate(adj, *row, g.sum_cols()?)?;
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(*a) {
                    let d = g.zip_rows(self.value(*row), "mul_row", |gi, s| gi * s)?;
                    self.accumulate(adj, *a, d)?;
                }
                if self.wants(*row) {
                    self.accumulate(adj, *row, g.mul(self.value(*a))?.sum_cols()?)?;
                }
            }
            Op::SelectCols(a, cols) => {
                let src = self.value(*a);
                let (r, c) = (src.rows(), src.cols());
                let mut d = Tensor::zeros(&[r, c]);
                let k = cols.len();
                let dd = d.data_mut();
                for i in 0..r {
                    for (p, &j) in cols.iter().enumerate() {
                        dd[i * c + j] += g.data()[i * k + p];
                    }
                }
                self.accumulate(adj, *a, d)?;
            }
            Op::MergeCols(parts) => {
                for (id, cols) in parts {
                    if self.wants(*id) {
                        self.accumulate(adj, *id, g.select_cols(cols)?)?;
                    }
                }
            }
            Op::SumRows(a) => {
                let src = self.value(*a);
                let (r, c) = (src.rows(), src.cols());
                let mut data = Vec::with_capacity(r * c);
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi, c));
                }
                self.accumulate(adj, *a, Tensor::new(vec![r, c], data)?)?;
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(adj, *a, Tensor::full(shape, g.item()))?;
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                self.accumulate(adj, *a, Tensor::full(t.shape(), g.item() / t.len() as f64))?;
            }
            Op::LogSoftmax(a) => {
                // d/dx_j = g_j - softmax_j * Σ_k g_k, row by row.
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let gi = &g.data()[i * c..(i + 1) * c];
                    let total: f64 = gi.iter().sum();
                    data.extend(gi.iter().zip(y.row(i)).map(|(gj, yj)| gj - yj.exp() * total));
                }
                self.accumulate(adj, *a, Tensor::new(vec![r, c], data)?)?;
            }
            Op::PickPerRow(a, idx) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (i, &j) in idx.iter().enumerate() {
                    d.data_mut()[i * c + j] = g.data()[i];
                }
                self.accumulate(adj, *a, d)?;
            }
        }
        Ok(())
    }
}

/// Compares reverse-mode gradients with central differences.
///
/// `f` builds a scalar loss from leaves bound to `thetas`. Returns the
/// maximum over all coordinates of `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check_many<F, E>(mut f: F, thetas: &[Tensor], h: f64) -> std::result::Result<f64, E>
where
    F: FnMut(&mut Graph, &[NodeId]) -> std::result::Result<NodeId, E>,
    E: From<TensorError>,
{
    let mut g = Graph::new();
    let ids = g.bind(thetas, true);
    let loss = f(&mut g, &ids)?;
    let analytic = g.backward(loss)?.take_all(&ids);

    let mut eval = |params: &[Tensor]| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let ids = g.bind(params, true);
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = thetas.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for k in 0..work[t].len() {
            let orig = work[t].data()[k];
            work[t].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[t].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[t].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Single-tensor form of [`grad_check_many`].
pub fn grad_check<F, E>(mut f: F, theta: &Tensor, h: f64) -> std::result::Result<f64, E>
where
    F: FnMut(&mut Graph, NodeId) -> std::result::Result<NodeId, E>,
    E: From<TensorError>,
{
    grad_check_many(|g, ids| f(g, ids[0]), std::slice::from_ref(theta), h)
}
