//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so node ids form a topological
//! order and `backward` is a single reverse sweep.

use super::matrix::{matmul_into, Matrix};
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive that produced a node, with whatever it needs for backward.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// Row-wise `x·W + b` with `x: n×in`, `W: in×out`, `b: 1×out`.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    GatherRows { table: NodeId, indices: Vec<usize> },
    Reshape(NodeId),
    ConcatCols(Vec<NodeId>),
    /// Per-element multiplier: 0 for dropped, `1/(1-rate)` for kept.
    Dropout { x: NodeId, mask: Vec<f64> },
    WeightedSum(Vec<(NodeId, f64)>),
    /// Scalar whose local gradients were computed together with its value.
    Scalar(Vec<(NodeId, Matrix)>),
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Relu(x) | Op::Reshape(x) => vec![*x],
            Op::GatherRows { table, .. } => vec![*table],
            Op::ConcatCols(xs) => xs.clone(),
            Op::Dropout { x, .. } => vec![*x],
            Op::WeightedSum(terms) => terms.iter().map(|(id, _)| *id).collect(),
            Op::Scalar(local) => local.iter().map(|(id, _)| *id).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub value: Matrix,
    pub grad: Matrix,
    pub op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    pub fn take_grad(&mut self, id: NodeId) -> Matrix {
        let n = &mut self.nodes[id.0];
        std::mem::replace(&mut n.grad, Matrix::zeros(0, 0))
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.shape() != (1, wv.cols()) {
            return Err(Error::Dimension(format!(
                "affine: x {:?}, W {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), wv.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(bv.data());
        }
        matmul_into(xv, wv, &mut out);
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    /// Rectifier `max(0, x)`.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Index(format!(
                "row {bad} requested from a table of {} rows",
                t.rows()
            )));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Matrix::from_vec(indices.len(), cols, data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let rows = xs.first().map_or(0, |&x| self.value(x).rows());
        if xs.iter().any(|&x| self.value(x).rows() != rows) {
            return Err(Error::Dimension("concat_cols: row counts differ".into()));
        }
        let cols: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            let dst = out.row_mut(r);
            for &x in xs {
                let src = self.nodes[x.0].value.row(r);
                dst[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(xs.to_vec())))
    }

    /// Inverted dropout. Returns `x` itself when not training or `rate == 0`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut Rng, training: bool) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut out = self.value(x).clone();
        let mut mask = Vec::with_capacity(out.len());
        for v in out.data_mut() {
            let m = if rng.uniform() < rate { 0.0 } else { keep };
            *v *= m;
            mask.push(m);
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// `Σ cᵢ·xᵢ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Ok(self.leaf(Matrix::scalar(0.0)));
        };
        let (rows, cols) = self.value(first).shape();
        let mut out = Matrix::zeros(rows, cols);
        for &(id, c) in terms {
            out.add_scaled(self.value(id), c)?;
        }
        Ok(self.push(out, Op::WeightedSum(terms.to_vec())))
    }

    /// Scalar node with caller-supplied local gradients `∂value/∂input`.
    pub fn scalar(&mut self, value: f64, local: Vec<(NodeId, Matrix)>) -> Result<NodeId> {
        for (id, g) in &local {
            g.check_same_shape(self.value(*id))?;
        }
        Ok(self.push(Matrix::scalar(value), Op::Scalar(local)))
    }

    /// Reverse sweep from a 1×1 root; gradients accumulate into every node.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Dimension("backward root must be a scalar".into()));
        }
        for n in &mut self.nodes[..=root.0] {
            n.grad.fill(0.0);
        }
        self.nodes[root.0].grad.fill(1.0);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if matches!(node.op, Op::Leaf) || node.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            backprop(node, before);
        }
        Ok(())
    }
}

fn backprop(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Affine { x, w, b } => {
            let (x, w, b) = (x.0, w.0, b.0);
            let n_out = g.cols();
            // dW += xᵀ·g, db += Σ rows of g
            {
                let xv = before[x].value.clone();
                let dw = &mut before[w].grad;
                for r in 0..g.rows() {
                    let g_row = g.row(r);
                    for (k, &xk) in xv.row(r).iter().enumerate() {
                        if xk == 0.0 {
                            continue;
                        }
                        let dst = &mut dw.data_mut()[k * n_out..(k + 1) * n_out];
                        for (d, &gv) in dst.iter_mut().zip(g_row) {
                            *d += xk * gv;
                        }
                    }
                }
            }
            {
                let db = before[b].grad.data_mut();
                for r in 0..g.rows() {
                    for (d, &gv) in db.iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
            }
            // dx += g·Wᵀ
            let wv = before[w].value.clone();
            let dx = &mut before[x].grad;
            for r in 0..g.rows() {
                let g_row = g.row(r);
                let dst = dx.row_mut(r);
                for (k, d) in dst.iter_mut().enumerate() {
                    let w_row = &wv.data()[k * n_out..(k + 1) * n_out];
                    *d += w_row.iter().zip(g_row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Op::Relu(x) => {
            let out = &node.value;
            let dx = before[x.0].grad.data_mut();
            for ((d, &gv), &y) in dx.iter_mut().zip(g.data()).zip(out.data()) {
                if y > 0.0 {
                    *d += gv;
                }
            }
        }
        Op::GatherRows { table, indices } => {
            let dt = &mut before[table.0].grad;
            for (r, &i) in indices.iter().enumerate() {
                for (d, &gv) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                    *d += gv;
                }
            }
        }
        Op::Reshape(x) => {
            for (d, &gv) in before[x.0].grad.data_mut().iter_mut().zip(g.data()) {
                *d += gv;
            }
        }
        Op::ConcatCols(xs) => {
            let mut offset = 0;
            for x in xs {
                let dx = &mut before[x.0].grad;
                let w = dx.cols();
                for r in 0..g.rows() {
                    for (d, &gv) in dx.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                        *d += gv;
                    }
                }
                offset += w;
            }
        }
        Op::Dropout { x, mask } => {
            let dx = before[x.0].grad.data_mut();
            for ((d, &gv), &m) in dx.iter_mut().zip(g.data()).zip(mask) {
                *d += gv * m;
            }
        }
        Op::WeightedSum(terms) => {
            for &(id, c) in terms {
                for (d, &gv) in before[id.0].grad.data_mut().iter_mut().zip(g.data()) {
                    *d += c * gv;
                }
            }
        }
        Op::Scalar(local) => {
            let upstream = g.data()[0];
            for (id, lg) in local {
                for (d, &l) in before[id.0].grad.data_mut().iter_mut().zip(lg.data()) {
                    *d += upstream * l;
                }
            }
        }
    }
}
