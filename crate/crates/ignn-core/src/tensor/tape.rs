//! Minimal reverse-mode gradient engine over dense matrices.
//!
//! Operations are recorded in execution order on a [`Tape`]; since every
//! operand precedes its consumers, walking the tape backward visits nodes in
//! reverse topological order. `backward` is a pure function of the recorded
//! forward trace, so repeated calls yield bit-identical gradients.
//!
//! A tape is confined to one logical thread; there is no cross-thread
//! gradient accumulation.

use std::sync::Arc;

use crate::error::{IgnnError, Result};
use crate::graph::sparse::SparseGraph;
use crate::tensor::matrix::{softmax_slice, DenseMatrix};

/// Handle to a value recorded on a tape.
pub type VarId = usize;

enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    /// Matrix plus a broadcast 1 x c row.
    AddRow(VarId, VarId),
    MatMul(VarId, VarId),
    /// Constant sparse left factor times a recorded dense right factor.
    SpMm { graph: Arc<SparseGraph>, rhs: VarId },
    ScaleConst { input: VarId, factor: f64 },
    /// Matrix times a recorded 1 x 1 scalar.
    MulScalar { input: VarId, scalar: VarId },
    ElemMul(VarId, VarId),
    Tanh(VarId),
    Relu(VarId),
    Sigmoid(VarId),
    /// Softmax over the first `active` entries of a 1 x c row; the rest of
    /// the output is exactly zero (masked logits).
    SoftmaxMasked { input: VarId, active: usize },
    MeanRows(VarId),
    /// Column-concatenation of equal-height parts, zero-padded to
    /// `total_cols` on the right.
    ConcatColsPad { parts: Vec<VarId> },
    FrobNorm(VarId),
    Sum(VarId),
    /// sum_i weights[0, i] * parts[i] over the first parts.len() entries of
    /// a 1 x w weight row.
    SimplexCombo { weights: VarId, parts: Vec<VarId> },
    SumParts(Vec<VarId>),
}

struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
    param: bool,
}

/// Recorded forward trace plus the machinery to replay it backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient w.r.t. a recorded value; `None` when the value does not
    /// influence the differentiated scalar.
    pub fn wrt(&self, id: VarId) -> Option<&DenseMatrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`] but materializes zeros of the given shape.
    pub fn wrt_or_zeros(&self, id: VarId, rows: usize, cols: usize) -> DenseMatrix {
        self.wrt(id)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &DenseMatrix {
        &self.nodes[id].value
    }

    pub fn is_param(&self, id: VarId) -> bool {
        self.nodes[id].param
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool, param: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        self.nodes.len() - 1
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Record a constant; no gradient flows into it.
    pub fn constant(&mut self, value: DenseMatrix) -> VarId {
        self.push(value, Op::Leaf, false, false)
    }

    /// Record a trainable leaf; `backward` accumulates its gradient.
    pub fn param(&mut self, value: DenseMatrix) -> VarId {
        self.push(value, Op::Leaf, true, true)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.nodes[a].value.add(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rg, false))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.nodes[a].value.sub(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub(a, b), rg, false))
    }

    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId> {
        let value = self.nodes[a].value.add_row(&self.nodes[row].value)?;
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::AddRow(a, row), rg, false))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), rg, false))
    }

    pub fn spmm(&mut self, graph: Arc<SparseGraph>, rhs: VarId) -> Result<VarId> {
        let value = graph.matmul_dense(&self.nodes[rhs].value)?;
        let rg = self.requires(rhs);
        Ok(self.push(value, Op::SpMm { graph, rhs }, rg, false))
    }

    pub fn scale_const(&mut self, input: VarId, factor: f64) -> VarId {
        let value = self.nodes[input].value.scale(factor);
        let rg = self.requires(input);
        self.push(value, Op::ScaleConst { input, factor }, rg, false)
    }

    pub fn mul_scalar(&mut self, input: VarId, scalar: VarId) -> Result<VarId> {
        let s = &self.nodes[scalar].value;
        if s.shape() != (1, 1) {
            return Err(IgnnError::shape(
                "mul_scalar",
                self.nodes[input].value.shape(),
                s.shape(),
            ));
        }
        let value = self.nodes[input].value.scale(s.get(0, 0));
        let rg = self.requires(input) || self.requires(scalar);
        Ok(self.push(value, Op::MulScalar { input, scalar }, rg, false))
    }

    pub fn elem_mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.nodes[a].value.hadamard(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::ElemMul(a, b), rg, false))
    }

    pub fn tanh(&mut self, input: VarId) -> VarId {
        let value = self.nodes[input].value.map(f64::tanh);
        let rg = self.requires(input);
        self.push(value, Op::Tanh(input), rg, false)
    }

    /// Subgradient at 0 is 0.
    pub fn relu(&mut self, input: VarId) -> VarId {
        let value = self.nodes[input].value.map(|v| v.max(0.0));
        let rg = self.requires(input);
        self.push(value, Op::Relu(input), rg, false)
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let value = self.nodes[input].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.requires(input);
        self.push(value, Op::Sigmoid(input), rg, false)
    }

    /// Softmax over the first `active` entries of a 1 x c row; entries at or
    /// beyond `active` are masked out (output exactly 0 there).
    pub fn softmax_masked(&mut self, input: VarId, active: usize) -> Result<VarId> {
        let v = &self.nodes[input].value;
        if v.rows() != 1 || v.cols() == 0 {
            return Err(IgnnError::Domain(
                "softmax_masked expects a nonempty 1 x c row".into(),
            ));
        }
        if active == 0 || active > v.cols() {
            return Err(IgnnError::Domain(format!(
                "softmax_masked active {} outside 1..={}",
                active,
                v.cols()
            )));
        }
        let soft = softmax_slice(&v.data()[..active])?;
        let mut data = vec![0.0; v.cols()];
        data[..active].copy_from_slice(&soft);
        let value = DenseMatrix::from_vec(1, v.cols(), data)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::SoftmaxMasked { input, active }, rg, false))
    }

    /// Full softmax of a 1 x c row.
    pub fn softmax(&mut self, input: VarId) -> Result<VarId> {
        let cols = self.nodes[input].value.cols();
        self.softmax_masked(input, cols)
    }

    pub fn mean_rows(&mut self, input: VarId) -> VarId {
        let value = self.nodes[input].value.mean_rows();
        let rg = self.requires(input);
        self.push(value, Op::MeanRows(input), rg, false)
    }

    pub fn concat_cols_pad(&mut self, parts: &[VarId], total_cols: usize) -> Result<VarId> {
        if parts.is_empty() {
            return Err(IgnnError::Domain("concat of zero parts".into()));
        }
        let rows = self.nodes[parts[0]].value.rows();
        let width: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
        if width > total_cols {
            return Err(IgnnError::Domain(format!(
                "concat width {width} exceeds padded width {total_cols}"
            )));
        }
        let mut value = DenseMatrix::zeros(rows, total_cols);
        let mut offset = 0;
        for &p in parts {
            let part = &self.nodes[p].value;
            if part.rows() != rows {
                return Err(IgnnError::shape("concat", (rows, width), part.shape()));
            }
            for i in 0..rows {
                let src = part.row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
            }
            offset += part.cols();
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            value,
            Op::ConcatColsPad {
                parts: parts.to_vec(),
            },
            rg,
            false,
        ))
    }

    /// Frobenius norm as a 1 x 1 scalar; subgradient at 0 is 0.
    pub fn frob_norm(&mut self, input: VarId) -> VarId {
        let norm = self.nodes[input].value.frob_norm();
        let value = DenseMatrix::from_vec(1, 1, vec![norm]).expect("1x1");
        let rg = self.requires(input);
        self.push(value, Op::FrobNorm(input), rg, false)
    }

    pub fn sum(&mut self, input: VarId) -> VarId {
        let total = self.nodes[input].value.sum();
        let value = DenseMatrix::from_vec(1, 1, vec![total]).expect("1x1");
        let rg = self.requires(input);
        self.push(value, Op::Sum(input), rg, false)
    }

    /// sum_i weights[0, i] * parts[i], using the first parts.len() weights.
    pub fn simplex_combo(&mut self, weights: VarId, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(IgnnError::Domain("combo of zero parts".into()));
        }
        let w = &self.nodes[weights].value;
        if w.rows() != 1 || w.cols() < parts.len() {
            return Err(IgnnError::Domain(format!(
                "weight row has {} entries for {} parts",
                w.cols(),
                parts.len()
            )));
        }
        let shape = self.nodes[parts[0]].value.shape();
        let mut value = DenseMatrix::zeros(shape.0, shape.1);
        for (i, &p) in parts.iter().enumerate() {
            let coeff = w.get(0, i);
            value.axpy(coeff, &self.nodes[p].value)?;
        }
        let rg = self.requires(weights) || parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            value,
            Op::SimplexCombo {
                weights,
                parts: parts.to_vec(),
            },
            rg,
            false,
        ))
    }

    pub fn sum_parts(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(IgnnError::Domain("sum of zero parts".into()));
        }
        let shape = self.nodes[parts[0]].value.shape();
        let mut value = DenseMatrix::zeros(shape.0, shape.1);
        for &p in parts {
            value.add_assign(&self.nodes[p].value)?;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::SumParts(parts.to_vec()), rg, false))
    }

    /// X W + b with a 1 x cols bias row.
    pub fn affine(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Reverse pass from a 1 x 1 root. Gradients of intermediate nodes are
    /// dropped once consumed; leaf gradients are kept.
    pub fn backward(&mut self, root: VarId) -> Result<Gradients> {
        let root_value = &self.nodes[root].value;
        if root_value.shape() != (1, 1) {
            return Err(IgnnError::Domain(format!(
                "backward root must be 1x1, got {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[root] = Some(DenseMatrix::from_vec(1, 1, vec![1.0])?);
        for id in (0..=root).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[id].op, Op::Leaf);
            let g = if is_leaf {
                continue; // keep leaf gradient for the caller
            } else {
                grads[id].take().expect("checked above")
            };
            self.propagate(id, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        grads: &mut [Option<DenseMatrix>],
        id: VarId,
        contribution: DenseMatrix,
    ) -> Result<()> {
        match &mut grads[id] {
            Some(existing) => existing.add_assign(&contribution)?,
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }

    fn propagate(
        &self,
        id: VarId,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.requires(*b) {
                    Self::accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.requires(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.requires(*b) {
                    Self::accumulate(grads, *b, g.scale(-1.0))?;
                }
            }
            Op::AddRow(a, row) => {
                if self.requires(*a) {
                    Self::accumulate(grads, *a, g.clone())?;
                }
                if self.requires(*row) {
                    Self::accumulate(grads, *row, g.col_sums())?;
                }
            }
            Op::MatMul(a, b) => {
                if self.requires(*a) {
                    Self::accumulate(grads, *a, g.matmul_t(&self.nodes[*b].value)?)?;
                }
                if self.requires(*b) {
                    Self::accumulate(grads, *b, self.nodes[*a].value.t_matmul(g)?)?;
                }
            }
            Op::SpMm { graph, rhs } => {
                if self.requires(*rhs) {
                    Self::accumulate(grads, *rhs, graph.t_matmul_dense(g)?)?;
                }
            }
            Op::ScaleConst { input, factor } => {
                if self.requires(*input) {
                    Self::accumulate(grads, *input, g.scale(*factor))?;
                }
            }
            Op::MulScalar { input, scalar } => {
                let s = self.nodes[*scalar].value.get(0, 0);
                if self.requires(*input) {
                    Self::accumulate(grads, *input, g.scale(s))?;
                }
                if self.requires(*scalar) {
                    let d = g.dot(&self.nodes[*input].value)?;
                    Self::accumulate(grads, *scalar, DenseMatrix::from_vec(1, 1, vec![d])?)?;
                }
            }
            Op::ElemMul(a, b) => {
                if self.requires(*a) {
                    Self::accumulate(grads, *a, g.hadamard(&self.nodes[*b].value)?)?;
                }
                if self.requires(*b) {
                    Self::accumulate(grads, *b, g.hadamard(&self.nodes[*a].value)?)?;
                }
            }
            Op::Tanh(input) => {
                if self.requires(*input) {
                    let y = &self.nodes[id].value;
                    let dy = y.map(|v| 1.0 - v * v);
                    Self::accumulate(grads, *input, g.hadamard(&dy)?)?;
                }
            }
            Op::Relu(input) => {
                if self.requires(*input) {
                    let x = &self.nodes[*input].value;
                    let dy = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Self::accumulate(grads, *input, g.hadamard(&dy)?)?;
                }
            }
            Op::Sigmoid(input) => {
                if self.requires(*input) {
                    let y = &self.nodes[id].value;
                    let dy = y.map(|v| v * (1.0 - v));
                    Self::accumulate(grads, *input, g.hadamard(&dy)?)?;
                }
            }
            Op::SoftmaxMasked { input, active } => {
                if self.requires(*input) {
                    let y = &self.nodes[id].value;
                    let mut inner = 0.0;
                    for j in 0..*active {
                        inner += g.get(0, j) * y.get(0, j);
                    }
                    let mut gx = DenseMatrix::zeros(1, y.cols());
                    for j in 0..*active {
                        gx.set(0, j, y.get(0, j) * (g.get(0, j) - inner));
                    }
                    Self::accumulate(grads, *input, gx)?;
                }
            }
            Op::MeanRows(input) => {
                if self.requires(*input) {
                    let x = &self.nodes[*input].value;
                    let inv = 1.0 / x.rows() as f64;
                    let mut gx = DenseMatrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        for (o, gv) in gx.row_mut(i).iter_mut().zip(g.row(0).iter()) {
                            *o = gv * inv;
                        }
                    }
                    Self::accumulate(grads, *input, gx)?;
                }
            }
            Op::ConcatColsPad { parts, .. } => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.nodes[p].value.shape();
                    if self.requires(p) {
                        let mut gp = DenseMatrix::zeros(shape.0, shape.1);
                        for i in 0..shape.0 {
                            gp.row_mut(i)
                                .copy_from_slice(&g.row(i)[offset..offset + shape.1]);
                        }
                        Self::accumulate(grads, p, gp)?;
                    }
                    offset += shape.1;
                }
            }
            Op::FrobNorm(input) => {
                if self.requires(*input) {
                    let norm = self.nodes[id].value.get(0, 0);
                    let gx = if norm > 0.0 {
                        self.nodes[*input].value.scale(g.get(0, 0) / norm)
                    } else {
                        let shape = self.nodes[*input].value.shape();
                        DenseMatrix::zeros(shape.0, shape.1)
                    };
                    Self::accumulate(grads, *input, gx)?;
                }
            }
            Op::Sum(input) => {
                if self.requires(*input) {
                    let shape = self.nodes[*input].value.shape();
                    let gx = DenseMatrix::filled(shape.0, shape.1, g.get(0, 0));
                    Self::accumulate(grads, *input, gx)?;
                }
            }
            Op::SimplexCombo { weights, parts } => {
                let w = &self.nodes[*weights].value;
                for (i, &p) in parts.iter().enumerate() {
                    if self.requires(p) {
                        Self::accumulate(grads, p, g.scale(w.get(0, i)))?;
                    }
                }
                if self.requires(*weights) {
                    let mut gw = DenseMatrix::zeros(1, w.cols());
                    for (i, &p) in parts.iter().enumerate() {
                        gw.set(0, i, g.dot(&self.nodes[p].value)?);
                    }
                    Self::accumulate(grads, *weights, gw)?;
                }
            }
            Op::SumParts(parts) => {
                for &p in parts {
                    if self.requires(p) {
                        Self::accumulate(grads, p, g.clone())?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Max relative disagreement between the tape gradient of `f` and central
/// finite differences at `x`. `eps` must lie in [1e-8, 1e-3].
///
/// The error is max over entries of |analytic - numeric| / max(1, |analytic|).
pub fn grad_check(
    f: impl Fn(&mut Tape, VarId) -> Result<VarId>,
    x: &DenseMatrix,
    eps: f64,
) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(IgnnError::Domain(format!(
            "grad_check eps {eps} outside [1e-8, 1e-3]"
        )));
    }
    let eval = |probe: &DenseMatrix| -> Result<f64> {
        let mut tape = Tape::new();
        let id = tape.constant(probe.clone());
        let root = f(&mut tape, id)?;
        let value = tape.value(root);
        if value.shape() != (1, 1) {
            return Err(IgnnError::Domain("grad_check needs a scalar f".into()));
        }
        let v = value.get(0, 0);
        if !v.is_finite() {
            return Err(IgnnError::Numeric(format!("non-finite f value {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut tape = Tape::new();
        let id = tape.param(x.clone());
        let root = f(&mut tape, id)?;
        if !tape.value(root).is_finite() {
            return Err(IgnnError::Numeric("non-finite f at base point".into()));
        }
        let grads = tape.backward(root)?;
        grads.wrt_or_zeros(id, x.rows(), x.cols())
    };

    let mut worst = 0.0f64;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, plus.get(i, j) + eps);
            let mut minus = x.clone();
            minus.set(i, j, minus.get(i, j) - eps);
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic.get(i, j);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_examples() {
        let mut tape = Tape::new();
        // Identity left factor.
        let x = tape.constant(DenseMatrix::identity(2));
        let w = tape.constant(DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]));
        let b = tape.constant(DenseMatrix::zeros(1, 2));
        let out = tape.affine(x, w, b).unwrap();
        assert_eq!(
            tape.value(out),
            &DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]])
        );

        // Sum plus bias.
        let x = tape.constant(DenseMatrix::from_rows(&[&[1.0, 1.0]]));
        let w = tape.constant(DenseMatrix::from_rows(&[&[1.0], &[1.0]]));
        let b = tape.constant(DenseMatrix::from_rows(&[&[5.0]]));
        let out = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(out).get(0, 0), 7.0);

        // Hand multiplication.
        let x = tape.constant(DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let w = tape.constant(DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let b = tape.constant(DenseMatrix::from_rows(&[&[1.0, 1.0]]));
        let out = tape.affine(x, w, b).unwrap();
        assert_eq!(
            tape.value(out),
            &DenseMatrix::from_rows(&[&[3.0, 2.0], &[5.0, 4.0]])
        );
    }

    #[test]
    fn grad_check_quadratic() {
        // f(x) = sum x^2: exact under central differences.
        let x = DenseMatrix::from_rows(&[&[1.0, 2.0]]);
        let err = grad_check(
            |tape, x| {
                let sq = tape.elem_mul(x, x)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn grad_check_softmax_dot() {
        let x = DenseMatrix::from_rows(&[&[0.3, -0.7, 1.1]]);
        let c = DenseMatrix::from_rows(&[&[0.25, -1.5, 0.8]]);
        let err = grad_check(
            |tape, x| {
                let s = tape.softmax(x)?;
                let cid = tape.constant(c.clone());
                let prod = tape.elem_mul(s, cid)?;
                Ok(tape.sum(prod))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn grad_check_constant_function_is_zero_everywhere() {
        let x = DenseMatrix::from_rows(&[&[0.4, -0.2]]);
        let err = grad_check(
            |tape, _x| Ok(tape.constant(DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap())),
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let x = DenseMatrix::zeros(1, 1);
        assert!(grad_check(|tape, x| Ok(tape.sum(x)), &x, 1e-2).is_err());
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.param(DenseMatrix::from_rows(&[&[0.3, -1.2], &[0.7, 0.1]]));
        let w = tape.param(DenseMatrix::from_rows(&[&[0.5, 0.2], &[-0.4, 0.9]]));
        let prod = tape.matmul(x, w).unwrap();
        let act = tape.tanh(prod);
        let root = tape.frob_norm(act);
        let g1 = tape.backward(root).unwrap();
        let g2 = tape.backward(root).unwrap();
        assert_eq!(g1.wrt(x), g2.wrt(x));
        assert_eq!(g1.wrt(w), g2.wrt(w));
        assert!(g1.wrt(x).is_some());
    }

    #[test]
    fn masked_softmax_single_active_is_one() {
        let mut tape = Tape::new();
        let v = tape.constant(DenseMatrix::from_rows(&[&[4.2, -1.0, 9.9]]));
        let s = tape.softmax_masked(v, 1).unwrap();
        assert_eq!(tape.value(s), &DenseMatrix::from_rows(&[&[1.0, 0.0, 0.0]]));
    }

    #[test]
    fn spmm_gradient_matches_dense_route() {
        use std::sync::Arc;
        let graph = Arc::new(
            SparseGraph::from_triples(3, &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 1, 0.25)])
                .unwrap(),
        );
        let x = DenseMatrix::from_rows(&[&[0.2, 0.5], &[-0.3, 0.8], &[0.9, -0.1]]);
        let dense = graph.to_dense();
        let err = grad_check(
            |tape, x| {
                let g = tape.spmm(graph.clone(), x)?;
                Ok(tape.frob_norm(g))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "sparse path error {err}");
        let err_dense = grad_check(
            |tape, x| {
                let d = tape.constant(dense.clone());
                let g = tape.matmul(d, x)?;
                Ok(tape.frob_norm(g))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err_dense < 1e-6, "dense path error {err_dense}");
    }
}
