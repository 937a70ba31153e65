//! Reverse-mode differentiation over a per-forward-pass operation list.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only for its lifetime. Every op
//! appends one node whose inputs are earlier nodes, so the node list is already
//! in topological order and `backward` is a single reverse sweep.

use crate::error::{NumError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{axpy, dot, matmul_dims, matmul_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { m: Var, v: Var, cols: usize },
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    BceLogit { x: Var, label: f64 },
    Slice { a: Var, start: usize },
    Row { a: Var, index: usize, cols: usize },
    Concat { inputs: Vec<Var>, outer: usize, chunks: Vec<usize> },
    Stack { inputs: Vec<Var>, width: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `[m×k]·[k×n] → [m×n]`, or `[m×k]·[k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        matmul_into(self.data(a), self.data(b), &mut out, m, k, n);
        let shape = if self.value(b).rank() == 1 { vec![m] } else { vec![m, n] };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() != 2 {
            return Err(NumError::Shape {
                op: "transpose",
                lhs: shape.to_vec(),
                rhs: vec![],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let src = self.data(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(Tensor::matrix(cols, rows, out)?, Op::Transpose { a, rows, cols }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out).expect("shape preserved"), op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out).expect("shape preserved"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds vector `v[d]` to every row of matrix `m[n×d]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(NumError::Shape {
                op: "add_row",
                lhs: ms.to_vec(),
                rhs: vs.to_vec(),
            });
        }
        let cols = ms[1];
        let vdata = self.data(v);
        let mut out = self.data(m).to_vec();
        for row in out.chunks_mut(cols) {
            for (o, x) in row.iter_mut().zip(vdata) {
                *o += x;
            }
        }
        let shape = self.shape(m).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow { m, v, cols }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Inner product of two rank-1 tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        if self.value(a).rank() != 1 {
            return Err(NumError::Shape {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let s = dot(self.data(a), self.data(b));
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    fn check_vector(&self, op: &'static str, a: Var) -> Result<()> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(NumError::Shape {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        if t.is_empty() {
            return Err(NumError::Domain {
                op,
                reason: "empty input".into(),
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vector("softmax", a)?;
        let out = softmax(self.data(a));
        Ok(self.push(Tensor::vector(out), Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vector("log_softmax", a)?;
        let out = log_softmax(self.data(a));
        Ok(self.push(Tensor::vector(out), Op::LogSoftmax(a)))
    }

    /// `−log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.check_vector("cross_entropy", logits)?;
        let n = self.value(logits).len();
        if target >= n {
            return Err(NumError::Index {
                op: "cross_entropy",
                index: target,
                len: n,
            });
        }
        let logp = log_softmax(self.data(logits));
        let loss = -logp[target];
        let probs = logp.iter().map(|v| v.exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// `−log P(label)` where `P(1) = σ(x)` for a single-element logit `x`.
    pub fn bce_with_logit(&mut self, x: Var, label: bool) -> Result<Var> {
        let xv = self.value(x).item()?;
        let y = if label { 1.0 } else { 0.0 };
        let loss = softplus(xv) - y * xv;
        Ok(self.push(Tensor::scalar(loss), Op::BceLogit { x, label: y }))
    }

    /// Contiguous sub-range of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || start + len > t.len() {
            return Err(NumError::Index {
                op: "slice",
                index: start + len,
                len: t.len(),
            });
        }
        let out = t.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Slice { a, start }))
    }

    /// Row `index` of a rank-2 tensor, as a rank-1 tensor (embedding lookup).
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        let out = t.row(index)?.to_vec();
        let cols = t.shape()[1];
        Ok(self.push(Tensor::vector(out), Op::Row { a, index, cols }))
    }

    /// Joins tensors of equal rank along `axis`; other dimensions must agree.
    /// Scalars joined along axis 0 form a vector.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| NumError::Domain {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if base.is_empty() && axis == 0 {
            return self.concat_scalars(inputs);
        }
        if axis >= base.len() {
            return Err(NumError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(NumError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let chunks: Vec<usize> = inputs.iter().map(|v| self.shape(*v)[axis] * inner).collect();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (v, &c) in inputs.iter().zip(&chunks) {
                out.extend_from_slice(&self.data(*v)[o * c..(o + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Scalars joined into a vector.
    fn concat_scalars(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(inputs.len());
        for v in inputs {
            let s = self.shape(*v);
            if !s.is_empty() {
                return Err(NumError::Shape {
                    op: "concat",
                    lhs: vec![],
                    rhs: s.to_vec(),
                });
            }
            out.push(self.data(*v)[0]);
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Concat {
                inputs: inputs.to_vec(),
                outer: 1,
                chunks: vec![1; inputs.len()],
            },
        ))
    }

    /// Stacks equal-length rank-1 tensors into an `[n×d]` matrix.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| NumError::Domain {
            op: "stack",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if base.len() != 1 {
            return Err(NumError::Shape {
                op: "stack",
                lhs: base,
                rhs: vec![],
            });
        }
        let width = base[0];
        let mut out = Vec::with_capacity(width * inputs.len());
        for v in inputs {
            if self.shape(*v) != base.as_slice() {
                return Err(NumError::Shape {
                    op: "stack",
                    lhs: base,
                    rhs: self.shape(*v).to_vec(),
                });
            }
            out.extend_from_slice(self.data(*v));
        }
        Ok(self.push(
            Tensor::matrix(inputs.len(), width, out)?,
            Op::Stack {
                inputs: inputs.to_vec(),
                width,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.data(a).to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Accumulates `d loss / d θ` into `grads` for every parameter reachable from `loss`.
    ///
    /// Calling this twice without `grads.zero()` in between sums both passes.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            self.backward_node(i, &gout, &mut g, grads);
        }
        Ok(())
    }

    fn backward_node(
        &self,
        i: usize,
        gout: &[f64],
        g: &mut [Option<Vec<f64>>],
        grads: &mut Gradients,
    ) {
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(id) => grads.add_slice(*id, gout),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let bv = self.data(*b);
                let ga = slot(g, *a, m * k);
                for i in 0..m {
                    let dc = &gout[i * n..(i + 1) * n];
                    let row = &mut ga[i * k..(i + 1) * k];
                    if n == 1 {
                        axpy(dc[0], bv, row);
                    } else {
                        for (p, r) in row.iter_mut().enumerate() {
                            *r += dot(dc, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                let av = self.data(*a);
                let gb = slot(g, *b, k * n);
                for i in 0..m {
                    let dc = &gout[i * n..(i + 1) * n];
                    if n == 1 {
                        axpy(dc[0], &av[i * k..(i + 1) * k], gb);
                    } else {
                        for p in 0..k {
                            axpy(av[i * k + p], dc, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Transpose { a, rows, cols } => {
                let ga = slot(g, *a, rows * cols);
                for r in 0..*rows {
                    for c in 0..*cols {
                        ga[r * cols + c] += gout[c * rows + r];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(slot(g, *a, gout.len()), gout, 1.0);
                add_into(slot(g, *b, gout.len()), gout, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(slot(g, *a, gout.len()), gout, 1.0);
                add_into(slot(g, *b, gout.len()), gout, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let ga = slot(g, *a, gout.len());
                for ((x, d), y) in ga.iter_mut().zip(gout).zip(bv) {
                    *x += d * y;
                }
                let gb = slot(g, *b, gout.len());
                for ((x, d), y) in gb.iter_mut().zip(gout).zip(av) {
                    *x += d * y;
                }
            }
            Op::AddRow { m, v, cols } => {
                add_into(slot(g, *m, gout.len()), gout, 1.0);
                let gv = slot(g, *v, *cols);
                for row in gout.chunks(*cols) {
                    add_into(gv, row, 1.0);
                }
            }
            Op::Scale(a, f) => add_into(slot(g, *a, gout.len()), gout, *f),
            Op::Sigmoid(a) => {
                let y = out.expect("value").data();
                let ga = slot(g, *a, gout.len());
                for ((x, d), y) in ga.iter_mut().zip(gout).zip(y) {
                    *x += d * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let y = out.expect("value").data();
                let ga = slot(g, *a, gout.len());
                for ((x, d), y) in ga.iter_mut().zip(gout).zip(y) {
                    *x += d * (1.0 - y * y);
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                for x in slot(g, *a, len).iter_mut() {
                    *x += gout[0];
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                axpy(gout[0], bv, slot(g, *a, av.len()));
                axpy(gout[0], av, slot(g, *b, bv.len()));
            }
            Op::Softmax(a) => {
                let y = out.expect("value").data();
                let inner = dot(gout, y);
                let ga = slot(g, *a, y.len());
                for ((x, d), y) in ga.iter_mut().zip(gout).zip(y) {
                    *x += y * (d - inner);
                }
            }
            Op::LogSoftmax(a) => {
                let y = out.expect("value").data();
                let total: f64 = gout.iter().sum();
                let ga = slot(g, *a, y.len());
                for ((x, d), y) in ga.iter_mut().zip(gout).zip(y) {
                    *x += d - y.exp() * total;
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let ga = slot(g, *logits, probs.len());
                axpy(gout[0], probs, ga);
                ga[*target] -= gout[0];
            }
            Op::BceLogit { x, label } => {
                let xv = self.data(*x)[0];
                slot(g, *x, 1)[0] += gout[0] * (sigmoid(xv) - label);
            }
            Op::Slice { a, start } => {
                let len = self.value(*a).len();
                add_into(&mut slot(g, *a, len)[*start..*start + gout.len()], gout, 1.0);
            }
            Op::Row { a, index, cols } => {
                let len = self.value(*a).len();
                add_into(
                    &mut slot(g, *a, len)[index * cols..(index + 1) * cols],
                    gout,
                    1.0,
                );
            }
            Op::Concat {
                inputs,
                outer,
                chunks,
            } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (v, &c) in inputs.iter().zip(chunks) {
                    let gv = slot(g, *v, outer * c);
                    for o in 0..*outer {
                        let src = &gout[o * total + offset..o * total + offset + c];
                        add_into(&mut gv[o * c..(o + 1) * c], src, 1.0);
                    }
                    offset += c;
                }
            }
            Op::Stack { inputs, width } => {
                for (r, v) in inputs.iter().enumerate() {
                    add_into(slot(g, *v, *width), &gout[r * width..(r + 1) * width], 1.0);
                }
            }
            Op::Reshape(a) => add_into(slot(g, *a, gout.len()), gout, 1.0),
        }
    }
}

fn slot(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    g[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, t)| store.insert(*n, t.clone()).unwrap())
            .collect();
        (store, ids)
    }

    #[test]
    fn square_gradient() {
        let (store, ids) = store_with(&[("w", Tensor::vector(vec![3.0]))]);
        let mut tape = Tape::new(&store);
        let w = tape.param(ids[0]);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let mut grads = Gradients::for_store(&store);
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(ids[0]).data(), &[6.0]);
    }

    #[test]
    fn sum_gradient_is_ones_and_accumulates() {
        let (store, ids) = store_with(&[("w", Tensor::vector(vec![1.0, -2.0, 5.0]))]);
        let mut tape = Tape::new(&store);
        let w = tape.param(ids[0]);
        let loss = tape.sum(w);
        let mut grads = Gradients::for_store(&store);
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(ids[0]).data(), &[1.0, 1.0, 1.0]);
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(ids[0]).data(), &[2.0, 2.0, 2.0]);
        grads.zero();
        assert_eq!(grads.get(ids[0]).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (store, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new(&store);
        let w = tape.param(ids[0]);
        let y = tape.tanh(w);
        let mut grads = Gradients::for_store(&store);
        assert!(matches!(
            tape.backward(y, &mut grads),
            Err(NumError::Contract(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![]));
        assert!(matches!(tape.softmax(x), Err(NumError::Domain { .. })));
    }

    #[test]
    fn pointwise_at_zero() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(t).data(), &[0.0]);
    }

    #[test]
    fn concat_vectors_and_bad_axis() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            tape.concat(&[a, b], 1),
            Err(NumError::Axis { axis: 1, rank: 1, .. })
        ));
    }

    #[test]
    fn concat_scalars_into_vector() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![2.0, 3.0])).unwrap();
        let mut tape = Tape::new(&store);
        let w = tape.param(id);
        let s = tape.sum(w);
        let k = tape.constant(Tensor::scalar(4.0));
        let c = tape.concat(&[s, k, s], 0).unwrap();
        assert_eq!(tape.shape(c), &[3]);
        assert_eq!(tape.value(c).data(), &[5.0, 4.0, 5.0]);
        let total = tape.sum(c);
        let mut g = Gradients::for_store(&store);
        tape.backward(total, &mut g).unwrap();
        assert_eq!(g.get(id).data(), &[2.0, 2.0]);
        assert!(tape.concat(&[s, w], 0).is_err());
    }

    #[test]
    fn concat_matrices_on_columns() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let flat = tape.constant(Tensor::vector(vec![0.7; 4]));
        let l = tape.cross_entropy(flat, 2).unwrap();
        assert!((tape.scalar(l).unwrap() - 4f64.ln()).abs() < 1e-12);
        let sharp = tape.constant(Tensor::vector(vec![30.0, -30.0, -30.0]));
        let l = tape.cross_entropy(sharp, 0).unwrap();
        assert!(tape.scalar(l).unwrap() < 1e-20);
        assert!(matches!(
            tape.cross_entropy(sharp, 3),
            Err(NumError::Index { index: 3, len: 3, .. })
        ));
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![-800.0, 0.0, 800.0]));
        let s = tape.sigmoid(x);
        let sm = tape.softmax(x).unwrap();
        let ls = tape.log_softmax(x).unwrap();
        let ce = tape.cross_entropy(x, 0).unwrap();
        for v in [s, sm, ls, ce] {
            assert!(tape.value(v).is_finite());
        }
        let big = tape.constant(Tensor::scalar(-800.0));
        let b = tape.bce_with_logit(big, true).unwrap();
        assert!((tape.scalar(b).unwrap() - 800.0).abs() < 1e-9);
    }
}
