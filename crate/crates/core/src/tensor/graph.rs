use alloc::vec;
use alloc::vec::Vec;

use super::{matmul_acc, matmul_grad_lhs, matmul_grad_rhs, numel, Result, Tensor, TensorError};
use crate::real::Real;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Reshape {
        a: Var,
    },
    SwapAxes {
        a: Var,
        axis0: usize,
        axis1: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Tape of executed ops in execution order.
///
/// Inputs of every op are recorded before the op itself, so the node list is
/// already a topological order and backward is a single reverse sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// For each flat index of the swapped output, the flat index in the input.
fn swap_axes_map(shape: &[usize], axis0: usize, axis1: usize) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(axis0, axis1);
    let mut strides = in_strides;
    strides.swap(axis0, axis1);

    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

/// True when `small` equals the trailing dims of `big`.
fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn gelu_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

fn gelu_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = T::FRAC_1_SQRT_2() * T::FRAC_2_SQRT_PI() * T::from_f64(0.5);
    inv_sqrt_2pi * (-(x * x) * T::from_f64(0.5)).exp()
}

fn grad_buf<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut [T] {
    grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Elementwise sum. `b` may also be a trailing-dims suffix of `a` (or
    /// the reverse), in which case it is broadcast over the leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if is_suffix(self.shape(a), self.shape(b)) {
            (a, b)
        } else if is_suffix(self.shape(b), self.shape(a)) {
            (b, a)
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let bn = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % bn])
            .collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    /// Batched matrix product `[.., m, p] × [.., p, n] → [.., m, n]`.
    ///
    /// Leading batch dims must be equal, or one operand must be a plain
    /// matrix that is shared across the other's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, p) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (p2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        if p != p2 || !(ba == bb || ba.is_empty() || bb.is_empty()) {
            return Err(mismatch());
        }
        let batch_dims = if ba.is_empty() { bb } else { ba };
        let batches = numel(batch_dims);
        let mut shape = batch_dims.to_vec();
        shape.extend_from_slice(&[m, n]);

        let (a_step, b_step) = (
            if ba.is_empty() { 0 } else { m * p },
            if bb.is_empty() { 0 } else { p * n },
        );
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![T::zero(); batches * m * n];
        for t in 0..batches {
            matmul_acc(
                &ad[t * a_step..t * a_step + m * p],
                &bd[t * b_step..t * b_step + p * n],
                &mut data[t * m * n..(t + 1) * m * n],
                m,
                p,
                n,
            );
        }
        Ok(self.push(Tensor { shape, data }, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// Exchanges two axes, materializing the result in row-major order.
    pub fn swap_axes(&mut self, a: Var, axis0: usize, axis1: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        for axis in [axis0, axis1] {
            if axis >= shape.len() {
                return Err(TensorError::InvalidAxis {
                    op: "swap_axes",
                    axis,
                    rank: shape.len(),
                });
            }
        }
        let src = self.value(a).data();
        let data = swap_axes_map(&shape, axis0, axis1)
            .into_iter()
            .map(|i| src[i])
            .collect();
        let mut out_shape = shape;
        out_shape.swap(axis0, axis1);
        let value = Tensor {
            shape: out_shape,
            data,
        };
        Ok(self.push(value, Op::SwapAxes { a, axis0, axis1 }, &[a]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(TensorError::NoInputs("concat"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut shape = base;
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.push(Tensor { shape, data }, op, inputs))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if start >= end || end > shape[axis] {
            return Err(TensorError::SliceOutOfRange {
                start,
                end,
                extent: shape[axis],
            });
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor {
            shape: out_shape,
            data,
        };
        Ok(self.push(value, Op::Slice { a, axis, start }, &[a]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_f64(t.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean { a }, &[a])
    }

    /// Softmax along `axis`, with the slice maximum subtracted first.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: t.rank(),
            });
        }
        let (outer, extent, inner) = axis_split(&t.shape, axis);
        let src = t.data();
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| o * extent * inner + l * inner + i;
                let max = (0..extent)
                    .map(|l| src[at(l)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..extent {
                    let e = (src[at(l)] - max).exp();
                    data[at(l)] = e;
                    total = total + e;
                }
                for l in 0..extent {
                    data[at(l)] = data[at(l)] / total;
                }
            }
        }
        let value = Tensor {
            shape: t.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Softmax { a, axis }, &[a]))
    }

    /// Normalizes each last-axis row to zero mean and unit variance
    /// (`eps` added to the variance under the square root), then applies
    /// `gain` and `bias` of the row's extent.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape.last().ok_or(TensorError::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        for v in [gain, bias] {
            if self.shape(v) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: t.shape.clone(),
                    rhs: self.shape(v).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.len() / d;
        let inv_d = T::one() / T::from_f64(d as f64);
        let mut xhat = vec![T::zero(); t.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut data = vec![T::zero(); t.len()];
        for r in 0..rows {
            let row = &t.data[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                data[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor {
            shape: t.shape.clone(),
            data,
        };
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        Ok(self.push(value, op, &[x, gain, bias]))
    }

    /// Exact GELU, `x·Φ(x)` with the erf-based normal CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * gelu_cdf(x));
        self.push(value, Op::Gelu { a }, &[a])
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: t.shape.clone(),
                rhs: vec![labels.len()],
            });
        }
        let classes = t.shape[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::LabelOutOfRange { label, classes });
        }
        let mut probs = vec![T::zero(); t.len()];
        let mut loss = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &t.data[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - log_z).exp();
            }
            loss = loss + (log_z - row[label]);
        }
        let loss = loss / T::from_f64(labels.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Populates gradients of `loss` for every node that requires one.
    ///
    /// A graph can be differentiated once; a second call returns
    /// [`TensorError::StaleGraph`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::StaleGraph);
        }
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyGraph);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = Some(g.unwrap_or_else(|| vec![T::zero(); node.value.len()]));
            }
        }
        self.consumed = true;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::Add { a, b } => {
                if self.wants(a) {
                    for (d, &x) in grad_buf(grads, a, g.len()).iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
                if self.wants(b) {
                    let bn = self.value(b).len();
                    let db = grad_buf(grads, b, bn);
                    for (i, &x) in g.iter().enumerate() {
                        db[i % bn] = db[i % bn] + x;
                    }
                }
            }
            &Op::Mul { a, b } => {
                for (target, other) in [(a, b), (b, a)] {
                    if self.wants(target) {
                        let o = self.value(other).data();
                        let d = grad_buf(grads, target, g.len());
                        for i in 0..g.len() {
                            d[i] = d[i] + g[i] * o[i];
                        }
                    }
                }
            }
            &Op::Scale { a, factor } => {
                if self.wants(a) {
                    for (d, &x) in grad_buf(grads, a, g.len()).iter_mut().zip(g) {
                        *d = *d + x * factor;
                    }
                }
            }
            &Op::MatMul { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (sa, sb) = (av.shape(), bv.shape());
                let (m, p) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batches = g.len() / (m * n);
                let a_step = if sa.len() == 2 { 0 } else { m * p };
                let b_step = if sb.len() == 2 { 0 } else { p * n };
                if self.wants(a) {
                    let da = grad_buf(grads, a, av.len());
                    for t in 0..batches {
                        matmul_grad_lhs(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv.data[t * b_step..t * b_step + p * n],
                            &mut da[t * a_step..t * a_step + m * p],
                            m,
                            p,
                            n,
                        );
                    }
                }
                if self.wants(b) {
                    let db = grad_buf(grads, b, bv.len());
                    for t in 0..batches {
                        matmul_grad_rhs(
                            &av.data[t * a_step..t * a_step + m * p],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut db[t * b_step..t * b_step + p * n],
                            m,
                            p,
                            n,
                        );
                    }
                }
            }
            &Op::Reshape { a } => {
                if self.wants(a) {
                    for (d, &x) in grad_buf(grads, a, g.len()).iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
            }
            &Op::SwapAxes { a, axis0, axis1 } => {
                if self.wants(a) {
                    let map = swap_axes_map(self.shape(a), axis0, axis1);
                    let d = grad_buf(grads, a, g.len());
                    for (out_i, in_i) in map.into_iter().enumerate() {
                        d[in_i] = d[in_i] + g[out_i];
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for o in 0..outer {
                    for &v in inputs {
                        let t = self.value(v);
                        let chunk = t.shape[*axis] * inner;
                        if self.wants(v) {
                            let d = grad_buf(grads, v, t.len());
                            for i in 0..chunk {
                                d[o * chunk + i] = d[o * chunk + i] + g[offset + i];
                            }
                        }
                        offset += chunk;
                    }
                }
            }
            &Op::Slice { a, axis, start } => {
                if self.wants(a) {
                    let src_shape = self.shape(a).to_vec();
                    let (outer, extent, inner) = axis_split(&src_shape, axis);
                    let width = node.value.shape[axis] * inner;
                    let d = grad_buf(grads, a, numel(&src_shape));
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        for i in 0..width {
                            d[base + i] = d[base + i] + g[o * width + i];
                        }
                    }
                }
            }
            &Op::Sum { a } => {
                if self.wants(a) {
                    let n = self.value(a).len();
                    for d in grad_buf(grads, a, n).iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            &Op::Mean { a } => {
                if self.wants(a) {
                    let n = self.value(a).len();
                    let share = g[0] / T::from_f64(n as f64);
                    for d in grad_buf(grads, a, n).iter_mut() {
                        *d = *d + share;
                    }
                }
            }
            &Op::Softmax { a, axis } => {
                if self.wants(a) {
                    let y = node.value.data();
                    let (outer, extent, inner) = axis_split(node.value.shape(), axis);
                    let d = grad_buf(grads, a, y.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| o * extent * inner + l * inner + i;
                            let dot: T = (0..extent).map(|l| g[at(l)] * y[at(l)]).sum();
                            for l in 0..extent {
                                let k = at(l);
                                d[k] = d[k] + y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let gv = self.value(gain).data();
                let dim = gv.len();
                let rows = g.len() / dim;
                if self.wants(x) {
                    let inv_d = T::one() / T::from_f64(dim as f64);
                    let dx = grad_buf(grads, x, g.len());
                    for r in 0..rows {
                        let span = r * dim..(r + 1) * dim;
                        let (gr, hr) = (&g[span.clone()], &xhat[span]);
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..dim {
                            let dh = gr[j] * gv[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        for j in 0..dim {
                            let dh = gr[j] * gv[j];
                            let k = r * dim + j;
                            dx[k] = dx[k] + rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
                if self.wants(gain) {
                    let dg = grad_buf(grads, gain, dim);
                    for (i, (&gi, &hi)) in g.iter().zip(xhat).enumerate() {
                        dg[i % dim] = dg[i % dim] + gi * hi;
                    }
                }
                if self.wants(bias) {
                    let db = grad_buf(grads, bias, dim);
                    for (i, &gi) in g.iter().enumerate() {
                        db[i % dim] = db[i % dim] + gi;
                    }
                }
            }
            &Op::Gelu { a } => {
                if self.wants(a) {
                    let xs = self.value(a).data();
                    let d = grad_buf(grads, a, g.len());
                    for i in 0..g.len() {
                        let x = xs[i];
                        d[i] = d[i] + g[i] * (gelu_cdf(x) + x * gelu_pdf(x));
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.wants(*logits) {
                    let classes = probs.len() / labels.len();
                    let share = g[0] / T::from_f64(labels.len() as f64);
                    let d = grad_buf(grads, *logits, probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let k = r * classes + c;
                            let target = if c == label { T::one() } else { T::zero() };
                            d[k] = d[k] + share * (probs[k] - target);
                        }
                    }
                }
            }
        }
    }
}
