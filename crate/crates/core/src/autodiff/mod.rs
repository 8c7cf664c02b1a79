//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation is evaluated eagerly and its value cached on the tape, so
//! nodes are stored in topological order by construction. [`Tape::backward`]
//! walks the tape once in reverse, applying each op's derivative rule and
//! summing contributions into nodes with several consumers.
//!
//! Only nodes that depend on a `requires_grad` leaf take part in the reverse
//! sweep. Building the network parameters as plain leaves therefore freezes
//! them: no gradient is computed for them at all.

mod gradcheck;

use std::collections::BTreeMap;

pub use gradcheck::{grad_check, grad_check_many, relative_error};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// The closed set of differentiable operations.
///
/// Shape rules (matrix view, rank-1 `[n]` reads as `1 x n`):
///
/// | op | inputs | output |
/// |----|--------|--------|
/// | `Add`, `Sub`, `Mul` | `a`, `b` with equal matrix views | shape of `a` |
/// | `MatMul` | `[m,k]`, `[k,n]` | `[m,n]` |
/// | `Scale(c)`, `Tanh`, `Sigmoid` | any | same |
/// | `AddRow` | `[m,n]`, row `[n]` or `[1,n]` | `[m,n]` |
/// | `Transpose` | `[m,n]` | `[n,m]` |
/// | `ConcatRows` | `[m_i, n]` ... | `[sum m_i, n]` |
/// | `ConcatCols` | `[m, n_i]` ... | `[m, sum n_i]` |
/// | `SliceRows`, `SliceCols` | `[m,n]` | sub-block |
/// | `Sum` | any | `[1]` |
/// | `MeanSquaredDiff` | `a`, `b` of equal length | `[1]`, `mean((a-b)^2)` |
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Scale(f64),
    Tanh,
    Sigmoid,
    AddRow,
    Transpose,
    ConcatRows,
    ConcatCols,
    SliceRows { start: usize, count: usize },
    SliceCols { start: usize, width: usize },
    Sum,
    MeanSquaredDiff,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Scale(_) => "scale",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::AddRow => "add_row",
            OpKind::Transpose => "transpose",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::Sum => "sum",
            OpKind::MeanSquaredDiff => "mean_squared_diff",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::ConcatRows | OpKind::ConcatCols => None,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::AddRow | OpKind::MeanSquaredDiff => {
                Some(2)
            }
            _ => Some(1),
        }
    }

    /// Evaluates the op on concrete values.
    pub fn eval(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let name = self.name();
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(Error::InvalidShape {
                    shape: vec![inputs.len()],
                    reason: format!("{name} takes {n} inputs"),
                });
            }
        } else if inputs.is_empty() {
            return Err(Error::InvalidShape {
                shape: vec![0],
                reason: format!("{name} needs at least one input"),
            });
        }
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            let views_match = matches!((a.dims2(), b.dims2()), (Ok(x), Ok(y)) if x == y);
            if a.shape() == b.shape() || views_match {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    op: name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                })
            }
        };
        let out = match self {
            OpKind::Add => {
                same_shape(inputs[0], inputs[1])?;
                inputs[0].zip_map(inputs[1], |a, b| a + b)
            }
            OpKind::Sub => {
                same_shape(inputs[0], inputs[1])?;
                inputs[0].zip_map(inputs[1], |a, b| a - b)
            }
            OpKind::Mul => {
                same_shape(inputs[0], inputs[1])?;
                inputs[0].zip_map(inputs[1], |a, b| a * b)
            }
            OpKind::MatMul => inputs[0].matmul(inputs[1])?,
            OpKind::Scale(c) => inputs[0].map(|v| v * c),
            OpKind::Tanh => inputs[0].map(f64::tanh),
            OpKind::Sigmoid => inputs[0].map(sigmoid),
            OpKind::AddRow => {
                let (m, n) = inputs[0].dims2()?;
                let (rr, rn) = inputs[1].dims2()?;
                if rr != 1 || rn != n {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: inputs[0].shape().to_vec(),
                        rhs: inputs[1].shape().to_vec(),
                    });
                }
                let row = inputs[1].data();
                let mut data = inputs[0].data().to_vec();
                for chunk in data.chunks_exact_mut(n) {
                    for (v, b) in chunk.iter_mut().zip(row) {
                        *v += b;
                    }
                }
                Tensor::from_matrix(m, n, data)?
            }
            OpKind::Transpose => inputs[0].transpose()?,
            OpKind::ConcatRows => Tensor::concat_rows(inputs)?,
            OpKind::ConcatCols => Tensor::concat_cols(inputs)?,
            OpKind::SliceRows { start, count } => inputs[0].slice_rows(*start, *count)?,
            OpKind::SliceCols { start, width } => inputs[0].slice_cols(*start, *width)?,
            OpKind::Sum => Tensor::scalar(inputs[0].sum()),
            OpKind::MeanSquaredDiff => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.len() != b.len() {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
                Tensor::scalar(sq / a.len() as f64)
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
struct Node {
    kind: Option<OpKind>,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
    /// Depends on at least one `requires_grad` leaf.
    tracked: bool,
}

/// A single-use computation record. Build, call [`Tape::backward`], drop.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push(Node {
            kind: None,
            inputs: vec![],
            value,
            requires_grad,
            tracked: requires_grad,
        }))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.id].value).collect();
        let value = kind.eval(&values)?;
        let tracked = inputs.iter().any(|v| self.nodes[v.id].tracked);
        Ok(self.push(Node {
            kind: Some(kind),
            inputs: inputs.iter().map(|v| v.id).collect(),
            value,
            requires_grad: false,
            tracked,
        }))
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            id: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpKind::AddRow, &[a, row])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatCols, parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        self.apply(OpKind::SliceRows { start, count }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        self.apply(OpKind::SliceCols { start, width }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean_squared_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MeanSquaredDiff, &[a, b])
    }

    /// Re-evaluates every op from the stored leaf values.
    pub fn replay(&self) -> Result<Tape> {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            let value = match &node.kind {
                None => node.value.clone(),
                Some(kind) => {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &out.nodes[i].value).collect();
                    kind.eval(&inputs)?
                }
            };
            out.nodes.push(Node { value, ..node.clone() });
        }
        Ok(out)
    }

    /// True when both tapes hold bit-identical values in every node.
    pub fn values_identical(&self, other: &Tape) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Reverse sweep from a scalar `loss`, returning the gradient of every
    /// `requires_grad` leaf that `loss` depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.id].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), 1.0));
        let mut leaves = BTreeMap::new();

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let Some(kind) = &node.kind else {
                if node.requires_grad {
                    leaves.insert(id, g);
                }
                continue;
            };
            if self.scatter_slice(kind, node, &g, &mut grads)? {
                continue;
            }
            for (slot, contrib) in self.input_grads(kind, node, &g)? {
                let input = node.inputs[slot];
                if !self.nodes[input].tracked {
                    continue;
                }
                debug_assert!(input < id, "tape order violated");
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib),
                    empty => *empty = Some(contrib),
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Adds a slice node's gradient straight into its source accumulator,
    /// avoiding a full-size zero tensor per slice. False for other ops.
    fn scatter_slice(&self, kind: &OpKind, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<bool> {
        let (row_start, row_count, col_start, col_width) = match *kind {
            OpKind::SliceRows { start, count } => (start, count, 0, None),
            OpKind::SliceCols { start, width } => (0, 0, start, Some(width)),
            _ => return Ok(false),
        };
        let src_id = node.inputs[0];
        if !self.nodes[src_id].tracked {
            return Ok(true);
        }
        let src = &self.nodes[src_id].value;
        let (r, c) = src.dims2()?;
        let acc = grads[src_id].get_or_insert_with(|| Tensor::zeros(src.shape()));
        let data = acc.data_mut();
        match col_width {
            None => {
                let block = &mut data[row_start * c..(row_start + row_count) * c];
                for (d, v) in block.iter_mut().zip(g.data()) {
                    *d += v;
                }
            }
            Some(width) => {
                for (i, row) in g.data().chunks_exact(width).enumerate().take(r) {
                    let dst = &mut data[i * c + col_start..i * c + col_start + width];
                    for (d, v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
        Ok(true)
    }

    /// Local vector-Jacobian products for `node` given its output gradient.
    /// Returns `(input slot, gradient)` pairs; untracked inputs are skipped.
    fn input_grads(&self, kind: &OpKind, node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let tracked = |slot: usize| self.nodes[node.inputs[slot]].tracked;
        let input = |slot: usize| &self.nodes[node.inputs[slot]].value;
        let mut out = Vec::with_capacity(node.inputs.len());
        match kind {
            OpKind::Add => {
                for slot in 0..2 {
                    if tracked(slot) {
                        out.push((slot, reshape_like(g.clone(), input(slot))?));
                    }
                }
            }
            OpKind::Sub => {
                if tracked(0) {
                    out.push((0, g.clone()));
                }
                if tracked(1) {
                    out.push((1, reshape_like(g.map(|v| -v), input(1))?));
                }
            }
            OpKind::Mul => {
                if tracked(0) {
                    out.push((0, g.zip_map(input(1), |a, b| a * b)));
                }
                if tracked(1) {
                    out.push((1, reshape_like(g.zip_map(input(0), |a, b| a * b), input(1))?));
                }
            }
            OpKind::MatMul => {
                let (a, b) = (input(0), input(1));
                if tracked(0) {
                    let ga = g.matmul_nt(b)?;
                    out.push((0, reshape_like(ga, a)?));
                }
                if tracked(1) {
                    let gb = a.matmul_tn(g)?;
                    out.push((1, reshape_like(gb, b)?));
                }
            }
            OpKind::Scale(c) => out.push((0, g.map(|v| v * c))),
            OpKind::Tanh => out.push((0, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)))),
            OpKind::Sigmoid => {
                out.push((0, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))));
            }
            OpKind::AddRow => {
                if tracked(0) {
                    out.push((0, g.clone()));
                }
                if tracked(1) {
                    let n = g.cols();
                    let mut row = vec![0.0; n];
                    for chunk in g.data().chunks_exact(n) {
                        for (r, v) in row.iter_mut().zip(chunk) {
                            *r += v;
                        }
                    }
                    out.push((1, Tensor::new(input(1).shape().to_vec(), row)?));
                }
            }
            OpKind::Transpose => out.push((0, reshape_like(g.transpose()?, input(0))?)),
            OpKind::ConcatRows => {
                let mut start = 0;
                for slot in 0..node.inputs.len() {
                    let rows = input(slot).rows();
                    if tracked(slot) {
                        out.push((slot, reshape_like(g.slice_rows(start, rows)?, input(slot))?));
                    }
                    start += rows;
                }
            }
            OpKind::ConcatCols => {
                let mut start = 0;
                for slot in 0..node.inputs.len() {
                    let width = input(slot).cols();
                    if tracked(slot) {
                        out.push((slot, reshape_like(g.slice_cols(start, width)?, input(slot))?));
                    }
                    start += width;
                }
            }
            OpKind::SliceRows { .. } | OpKind::SliceCols { .. } => {
                unreachable!("slices are scattered in place")
            }
            OpKind::Sum => out.push((0, Tensor::full(input(0).shape(), g.item()))),
            OpKind::MeanSquaredDiff => {
                let (a, b) = (input(0), input(1));
                let k = 2.0 * g.item() / a.len() as f64;
                let diff = a.zip_map(b, |x, y| k * (x - y));
                if tracked(1) {
                    out.push((
                        1,
                        Tensor::new(b.shape().to_vec(), diff.data().iter().map(|v| -v).collect())?,
                    ));
                }
                if tracked(0) {
                    out.push((0, diff));
                }
            }
        }
        Ok(out)
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Result<Tensor> {
    if t.shape() == like.shape() {
        Ok(t)
    } else {
        t.reshape(like.shape().to_vec())
    }
}

/// Gradients of a scalar loss with respect to the `requires_grad` leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` if the loss does not depend on it.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.leaves.get(&leaf.id)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.leaves.remove(&leaf.id)
    }

    /// Gradient for `leaf`, zeros of `shape` when the loss is independent of it.
    pub fn get_or_zeros(&self, leaf: Var, shape: &[usize]) -> Tensor {
        self.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
