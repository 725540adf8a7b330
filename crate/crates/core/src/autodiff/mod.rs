//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks the record in exact reverse, accumulating adjoints into every node
//! that depends on a gradient-requiring leaf.

mod gradcheck;
mod ops;
mod optim;

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, SparseOperator};
use crate::tensor::Tensor;

pub use gradcheck::{fd_check, fd_check_with};
pub use optim::{Adam, AdamConfig};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparsity pattern for graph attention: row `v` lists `v` and its neighbors.
/// `incoming` maps each column back to the forward nonzeros that reference it
/// so the adjoint can be gathered row by row.
#[derive(Debug, Clone)]
pub struct AttentionPattern {
    pub(crate) rows: CsrMatrix,
    pub(crate) incoming_offsets: Vec<usize>,
    /// `(target row v, position in rows' nonzero array)`
    pub(crate) incoming: Vec<(usize, usize)>,
}

impl AttentionPattern {
    pub fn new(rows: CsrMatrix) -> Self {
        let n = rows.cols();
        let mut counts = vec![0usize; n + 1];
        for r in 0..rows.rows() {
            for &c in rows.row(r).0 {
                counts[c + 1] += 1;
            }
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut incoming = vec![(0, 0); rows.nnz()];
        let mut pos = 0;
        for r in 0..rows.rows() {
            for &c in rows.row(r).0 {
                incoming[next[c]] = (r, pos);
                next[c] += 1;
                pos += 1;
            }
        }
        AttentionPattern {
            rows,
            incoming_offsets: offsets,
            incoming,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.rows()
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Affine(Var, Var, Var),
    Film {
        gamma: Var,
        f: Var,
        beta: Var,
    },
    GroupMix {
        d0: Var,
        d1: Var,
        m0: Arc<Vec<f64>>,
        m1: Arc<Vec<f64>>,
        eps: f64,
    },
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    ScaleRows(Var, Arc<Vec<f64>>),
    Relu(Var),
    LeakyRelu(Var, f64),
    RowSoftmax(Var),
    Ln(Var),
    ClampMin(Var, f64),
    Sum(Var),
    MeanRows(Var),
    SqNorm(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    Pick(Var, Vec<(usize, usize)>),
    Spmm(Arc<SparseOperator>, Var),
    GraphAttention {
        z: Var,
        s_dst: Var,
        s_src: Var,
        pattern: Arc<AttentionPattern>,
        slope: f64,
        alpha: Vec<f64>,
        logits: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
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

    /// A gradient-requiring leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` lies
    /// on a gradient path.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::arg(format!(
                "{what} shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum; a `1×d` right operand is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb == 1 && ra != 1 && ca == cb {
            let bias = self.value(b).row(0).to_vec();
            let mut out = self.value(a).clone();
            crate::par::for_each_row(out.data_mut(), ca, |_, row| {
                row.iter_mut().zip(&bias).for_each(|(x, b)| *x += b)
            });
            return Ok(self.record(out, Op::AddRowBias(a, b), &[a, b]));
        }
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    /// `x·W + b` with `b` a `1×d` row broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let mut out = self.value(x).matmul(self.value(w))?;
        let bias = self.value(b);
        if bias.shape() != (1, out.cols()) {
            return Err(Error::arg(format!(
                "affine bias shape {:?} for output width {}",
                bias.shape(),
                out.cols()
            )));
        }
        let bias = bias.row(0);
        let cols = out.cols();
        crate::par::for_each_row(out.data_mut(), cols, |_, row| {
            row.iter_mut().zip(bias).for_each(|(x, b)| *x += b)
        });
        Ok(self.record(out, Op::Affine(x, w, b), &[x, w, b]))
    }

    /// Feature-wise modulation `(gamma + 1) ⊙ f + beta`, evaluated as
    /// `gamma·f + f + beta`.
    pub fn film(&mut self, gamma: Var, f: Var, beta: Var) -> Result<Var> {
        self.same_shape(gamma, f, "film")?;
        self.same_shape(beta, f, "film")?;
        let (g, fv, b) = (self.value(gamma), self.value(f), self.value(beta));
        let data = g
            .data()
            .iter()
            .zip(fv.data())
            .zip(b.data())
            .map(|((g, f), b)| g * f + f + b)
            .collect();
        let out = Tensor::from_vec(fv.rows(), fv.cols(), data)?;
        Ok(self.record(out, Op::Film { gamma, f, beta }, &[gamma, f, beta]))
    }

    /// `eps · (m0[i]·d0[i] + m1[i]·d1[i])` row by row.
    pub fn group_mix(&mut self, d0: Var, d1: Var, m0: Arc<Vec<f64>>, m1: Arc<Vec<f64>>, eps: f64) -> Result<Var> {
        self.same_shape(d0, d1, "group_mix")?;
        let (rows, cols) = self.shape(d0);
        if m0.len() != rows || m1.len() != rows {
            return Err(Error::arg(format!("group_mix: masks of length {} and {} for {rows} rows", m0.len(), m1.len())));
        }
        let (a, b) = (self.value(d0), self.value(d1));
        let mut out = Tensor::zeros(rows, cols);
        crate::par::for_each_row(out.data_mut(), cols, |i, row| {
            for ((o, x), y) in row.iter_mut().zip(a.row(i)).zip(b.row(i)) {
                *o = (x * m0[i] + y * m1[i]) * eps;
            }
        });
        Ok(self.record(out, Op::GroupMix { d0, d1, m0, m1, eps }, &[d0, d1]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.record(out, Op::Scale(a, s), &[a])
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::arg("mul_const shape mismatch"));
        }
        let out = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.record(out, Op::MulConst(a, c), &[a]))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if factors.len() != rows {
            return Err(Error::arg(format!(
                "scale_rows: {} factors for {rows} rows",
                factors.len()
            )));
        }
        let mut out = self.value(a).clone();
        crate::par::for_each_row(out.data_mut(), cols, |i, row| {
            row.iter_mut().for_each(|x| *x *= factors[i])
        });
        Ok(self.record(out, Op::ScaleRows(a, factors), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.record(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols();
        crate::par::for_each_row(out.data_mut(), cols, |_, row| softmax_in_place(row));
        self.record(out, Op::RowSoftmax(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("ln of non-positive value {x}")));
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.record(out, Op::Ln(a), &[a]))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        self.record(out, Op::ClampMin(a, floor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, Op::Sum(a), &[a])
    }

    /// Column means, `1×d`. An input with no rows yields zeros.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(1, cols);
        if rows > 0 {
            for r in 0..rows {
                out.row_mut(0)
                    .iter_mut()
                    .zip(x.row(r))
                    .for_each(|(o, v)| *o += v);
            }
            out.data_mut().iter_mut().for_each(|o| *o /= rows as f64);
        }
        self.record(out, Op::MeanRows(a), &[a])
    }

    /// Sum of squared entries.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sq_norm());
        self.record(out, Op::SqNorm(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::arg(format!("gather row {bad} out of {}", x.rows())));
        }
        let mut out = Tensor::zeros(idx.len(), x.cols());
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(x.row(i));
        }
        Ok(self.record(out, Op::GatherRows(a, idx), &[a]))
    }

    /// Selected entries `(row, col)` as a `k×1` column.
    pub fn pick(&mut self, a: Var, positions: Vec<(usize, usize)>) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(positions.len(), 1);
        for (k, &(r, c)) in positions.iter().enumerate() {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::arg(format!("pick ({r}, {c}) out of {:?}", x.shape())));
            }
            out.set(k, 0, x.get(r, c));
        }
        Ok(self.record(out, Op::Pick(a, positions), &[a]))
    }

    /// Constant sparse operator applied on the left: `S·a`.
    pub fn spmm(&mut self, op: Arc<SparseOperator>, a: Var) -> Result<Var> {
        let out = op.forward.spmm(self.value(a))?;
        Ok(self.record(out, Op::Spmm(op, a), &[a]))
    }

    /// Graph attention for one head: for each row `v`,
    /// `out_v = Σ_u softmax_u(leaky(s_dst[v] + s_src[u])) · z_u` over the
    /// pattern's row `v`.
    pub fn graph_attention(
        &mut self,
        z: Var,
        s_dst: Var,
        s_src: Var,
        pattern: Arc<AttentionPattern>,
        slope: f64,
    ) -> Result<Var> {
        let n = pattern.num_rows();
        let (zr, d) = self.shape(z);
        if zr != n || self.shape(s_dst) != (n, 1) || self.shape(s_src) != (n, 1) {
            return Err(Error::arg("graph_attention shape mismatch"));
        }
        let (out, alpha, logits) = ops::attention_forward(
            &pattern,
            self.value(z),
            self.value(s_dst).data(),
            self.value(s_src).data(),
            slope,
            d,
        );
        let op = Op::GraphAttention {
            z,
            s_dst,
            s_src,
            pattern,
            slope,
            alpha,
            logits,
        };
        Ok(self.record(out, op, &[z, s_dst, s_src]))
    }

    /// Inverted dropout. In eval mode, or with `p == 0`, returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(format!("dropout rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let (r, c) = self.shape(x);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, Tensor::from_vec(r, c, mask)?)
    }

    /// Accumulates `d loss / d v` for every gradient-requiring node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::arg(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                self.grads[i] = Some(g);
                continue;
            }
            let contributions = ops::adjoints(&self.nodes, &node.op, &node.value, &g)?;
            self.grads[i] = Some(g);
            for (v, t) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests;
