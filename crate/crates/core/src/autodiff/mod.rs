//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive records its inputs on a [`Tape`]. [`Tape::grad`] walks the
//! record backwards and emits the vector-Jacobian products as new tape
//! entries, built only from the same primitive set. Gradients are therefore
//! ordinary tape values that can themselves be differentiated, which is what
//! lets an outer loss see through an inner optimizer step.

mod kernels;

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::Dims4;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive kinds, as reported by [`Tape::kind`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Leaf,
    MatMul,
    Transpose,
    Conv2d3x3,
    Conv2d3x3Input,
    Conv2d3x3Kernel,
    Relu,
    Add,
    Sub,
    Mul,
    Scale,
    MulScalar,
    Sum,
    Expand,
    Mean,
    LogSoftmax,
    Exp,
    RowSum,
    RowExpand,
    NllLoss,
    Lerp,
    AvgPool2,
    Unpool2,
    Reshape,
    ChannelBroadcast,
    ChannelReduce,
    Custom,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv(Var, Var),
    ConvInput(Var, Var),
    ConvKernel(Var, Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Sum(Var),
    Expand(Var),
    Mean(Var),
    LogSoftmax(Var),
    Exp(Var),
    RowSum(Var),
    RowExpand(Var),
    Nll {
        logp: Var,
        labels: Rc<[usize]>,
        weights: Rc<[f64]>,
    },
    Lerp(Var, Var, Var),
    AvgPool2(Var),
    Unpool2(Var),
    Reshape(Var),
    ChannelBroadcast(Var),
    ChannelReduce(Var),
    Custom {
        inputs: Rc<[Var]>,
        partials: Rc<[Tensor]>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Transpose(a) | Relu(a) | Scale(a, _) | Sum(a) | Expand(a) | Mean(a)
            | LogSoftmax(a) | Exp(a) | RowSum(a) | RowExpand(a) | AvgPool2(a) | Unpool2(a)
            | Reshape(a) | ChannelBroadcast(a) | ChannelReduce(a) => vec![*a],
            MatMul(a, b) | Conv(a, b) | ConvInput(a, b) | ConvKernel(a, b) | Add(a, b)
            | Sub(a, b) | Mul(a, b) | MulScalar(a, b) => vec![*a, *b],
            Nll { logp, .. } => vec![*logp],
            Lerp(a, b, t) => vec![*a, *b, *t],
            Custom { inputs, .. } => inputs.to_vec(),
        }
    }

    fn kind(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Transpose(_) => Primitive::Transpose,
            Op::Conv(..) => Primitive::Conv2d3x3,
            Op::ConvInput(..) => Primitive::Conv2d3x3Input,
            Op::ConvKernel(..) => Primitive::Conv2d3x3Kernel,
            Op::Relu(_) => Primitive::Relu,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::MulScalar(..) => Primitive::MulScalar,
            Op::Sum(_) => Primitive::Sum,
            Op::Expand(_) => Primitive::Expand,
            Op::Mean(_) => Primitive::Mean,
            Op::LogSoftmax(_) => Primitive::LogSoftmax,
            Op::Exp(_) => Primitive::Exp,
            Op::RowSum(_) => Primitive::RowSum,
            Op::RowExpand(_) => Primitive::RowExpand,
            Op::Nll { .. } => Primitive::NllLoss,
            Op::Lerp(..) => Primitive::Lerp,
            Op::AvgPool2(_) => Primitive::AvgPool2,
            Op::Unpool2(_) => Primitive::Unpool2,
            Op::Reshape(_) => Primitive::Reshape,
            Op::ChannelBroadcast(_) => Primitive::ChannelBroadcast,
            Op::ChannelReduce(_) => Primitive::ChannelReduce,
            Op::Custom { .. } => Primitive::Custom,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of primitive applications. Entries only reference earlier
/// entries, so the record is topologically ordered by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients are taken with respect to.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> Primitive {
        self.nodes[v.0].op.kind()
    }

    /// Ids of the entries `v` was computed from.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn dims4(&self, op: &'static str, v: Var, other: &[usize]) -> Result<Dims4> {
        Dims4::from_shape(self.shape(v)).ok_or_else(|| shape_err(op, self.shape(v), other))
    }

    // ---- primitives --------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(shape_err("transpose", s, &[])),
        };
        let data = kernels::transpose(self.value(a).data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a)))
    }

    /// 3x3 convolution with zero padding 1 and stride 1.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var) -> Result<Var> {
        let xd = self.dims4("conv2d_3x3", x, self.shape(w))?;
        let co = match self.shape(w) {
            [co, ci, 3, 3] if *ci == xd.c => *co,
            s => return Err(shape_err("conv2d_3x3", self.shape(x), s)),
        };
        let data = kernels::conv3x3(self.value(x).data(), xd, self.value(w).data(), co);
        Ok(self.push(Tensor::new(vec![xd.b, co, xd.h, xd.w], data)?, Op::Conv(x, w)))
    }

    fn conv_input(&mut self, g: Var, w: Var) -> Result<Var> {
        let gd = self.dims4("conv2d_3x3_input", g, self.shape(w))?;
        let ci = match self.shape(w) {
            [co, ci, 3, 3] if *co == gd.c => *ci,
            s => return Err(shape_err("conv2d_3x3_input", self.shape(g), s)),
        };
        let data = kernels::conv3x3_input(self.value(g).data(), gd, self.value(w).data(), ci);
        Ok(self.push(Tensor::new(vec![gd.b, ci, gd.h, gd.w], data)?, Op::ConvInput(g, w)))
    }

    fn conv_kernel(&mut self, x: Var, g: Var) -> Result<Var> {
        let xd = self.dims4("conv2d_3x3_kernel", x, self.shape(g))?;
        let gd = self.dims4("conv2d_3x3_kernel", g, self.shape(x))?;
        if gd.b != xd.b || gd.h != xd.h || gd.w != xd.w {
            return Err(shape_err("conv2d_3x3_kernel", self.shape(x), self.shape(g)));
        }
        let data = kernels::conv3x3_kernel(self.value(x).data(), xd, self.value(g).data(), gd.c);
        Ok(self.push(Tensor::new(vec![gd.c, xd.c, 3, 3], data)?, Op::ConvKernel(x, g)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Multiplication by a one-element tensor that is itself differentiable.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().map_err(|_| shape_err("mul_scalar", self.shape(x), self.shape(s)))?;
        let value = self.value(x).map(|v| v * sv);
        Ok(self.push(value, Op::MulScalar(x, s)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        let sv = self.value(s).item().map_err(|_| shape_err("expand", self.shape(s), shape))?;
        Ok(self.push(Tensor::full(shape, sv), Op::Expand(s)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(shape_err("mean", self.shape(x), &[]));
        }
        let total: f64 = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(total / n as f64), Op::Mean(x)))
    }

    /// Row-wise log-softmax of a `(rows, k)` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let k = match self.shape(x) {
            [_, k] if *k > 0 => *k,
            s => return Err(shape_err("log_softmax", s, &[])),
        };
        let mut data = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(k) {
            let lse = crate::tensor::log_sum_exp(row);
            data.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::LogSoftmax(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    /// `(rows, k) -> (rows)`
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (r, k) = match self.shape(x) {
            [r, k] => (*r, *k),
            s => return Err(shape_err("row_sum", s, &[])),
        };
        let data = if k == 0 {
            vec![0.0; r]
        } else {
            self.value(x).data().chunks(k).map(|c| c.iter().sum()).collect()
        };
        Ok(self.push(Tensor::new(vec![r], data)?, Op::RowSum(x)))
    }

    /// `(rows) -> (rows, k)`
    pub fn row_expand(&mut self, s: Var, k: usize) -> Result<Var> {
        let r = match self.shape(s) {
            [r] => *r,
            sh => return Err(shape_err("row_expand", sh, &[k])),
        };
        let data = self
            .value(s)
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, k))
            .collect();
        Ok(self.push(Tensor::new(vec![r, k], data)?, Op::RowExpand(s)))
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities.
    pub fn nll_loss(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let n = labels.len();
        if n == 0 {
            return Err(shape_err("nll_loss", self.shape(logp), &[0]));
        }
        let weights = vec![1.0 / n as f64; n];
        self.weighted_nll_loss(logp, labels, &weights)
    }

    /// `-sum_b weights[b] * logp[b, labels[b]]`
    pub fn weighted_nll_loss(&mut self, logp: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let (r, k) = match self.shape(logp) {
            [r, k] => (*r, *k),
            s => return Err(shape_err("nll_loss", s, &[labels.len()])),
        };
        if labels.len() != r || weights.len() != r {
            return Err(shape_err("nll_loss", self.shape(logp), &[labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("nll_loss: label {bad} out of range for {k} classes")));
        }
        let data = self.value(logp).data();
        let total: f64 = labels
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(b, (&l, &w))| -w * data[b * k + l])
            .sum();
        Ok(self.push(
            Tensor::scalar(total),
            Op::Nll {
                logp,
                labels: labels.into(),
                weights: weights.into(),
            },
        ))
    }

    /// `(1 - t) * a + t * b` with a one-element `t`.
    pub fn lerp(&mut self, a: Var, b: Var, t: Var) -> Result<Var> {
        self.same_shape("lerp", a, b)?;
        let tv = self.value(t).item().map_err(|_| shape_err("lerp", self.shape(a), self.shape(t)))?;
        // Exact endpoints: t == 0 gives a, t == 1 gives b.
        let value = if tv == 0.0 {
            self.value(a).clone()
        } else if tv == 1.0 {
            self.value(b).clone()
        } else {
            self.value(a).zip(self.value(b), |x, y| (1.0 - tv) * x + tv * y)
        };
        Ok(self.push(value, Op::Lerp(a, b, t)))
    }

    /// 2x2 mean pooling of a `(b, c, h, w)` tensor with even `h`, `w`.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let d = self.dims4("avg_pool2", x, &[])?;
        if d.h % 2 != 0 || d.w % 2 != 0 {
            return Err(shape_err("avg_pool2", self.shape(x), &[2, 2]));
        }
        let data = kernels::avg_pool2(self.value(x).data(), d.b * d.c, d.h, d.w);
        Ok(self.push(Tensor::new(vec![d.b, d.c, d.h / 2, d.w / 2], data)?, Op::AvgPool2(x)))
    }

    fn unpool2(&mut self, x: Var) -> Result<Var> {
        let d = self.dims4("unpool2", x, &[])?;
        let data = kernels::unpool2(self.value(x).data(), d.b * d.c, d.h, d.w);
        Ok(self.push(Tensor::new(vec![d.b, d.c, d.h * 2, d.w * 2], data)?, Op::Unpool2(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Broadcasts a `(c)` vector along axis 1 of `shape` (`shape[1] == c`).
    pub fn channel_broadcast(&mut self, bias: Var, shape: &[usize]) -> Result<Var> {
        let c = match self.shape(bias) {
            [c] if shape.len() >= 2 && shape[1] == *c => *c,
            s => return Err(shape_err("channel_broadcast", s, shape)),
        };
        let outer = shape[0];
        let inner: usize = shape[2..].iter().product();
        let b = self.value(bias).data();
        let mut data = Vec::with_capacity(outer * c * inner);
        for _ in 0..outer {
            for &bv in b {
                data.extend(std::iter::repeat_n(bv, inner));
            }
        }
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::ChannelBroadcast(bias)))
    }

    /// Sums every axis except axis 1.
    pub fn channel_reduce(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("channel_reduce", &shape, &[]));
        }
        let (outer, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let xs = self.value(x).data();
        let mut data = vec![0.0; c];
        for o in 0..outer {
            for (ch, acc) in data.iter_mut().enumerate() {
                let start = (o * c + ch) * inner;
                *acc += xs[start..start + inner].iter().sum::<f64>();
            }
        }
        Ok(self.push(Tensor::new(vec![c], data)?, Op::ChannelReduce(x)))
    }

    /// `x + bias` with the bias broadcast along axis 1.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let b = self.channel_broadcast(bias, &shape)?;
        self.add(x, b)
    }

    /// An externally computed value with externally supplied partial
    /// derivatives with respect to one-element inputs.
    ///
    /// The entry behaves as its first-order expansion: the adjoint of
    /// `inputs[i]` is `sum(g * partials[i])`, and the partials are constants.
    pub fn custom(&mut self, value: Tensor, inputs: &[Var], partials: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != partials.len() {
            return Err(Error::invalid("custom: one partial per input is required"));
        }
        for (i, p) in inputs.iter().zip(&partials) {
            if self.value(*i).numel() != 1 {
                return Err(Error::NotScalar {
                    op: "custom",
                    shape: self.shape(*i).to_vec(),
                });
            }
            if p.shape() != value.shape() {
                return Err(shape_err("custom", p.shape(), value.shape()));
            }
        }
        Ok(self.push(
            value,
            Op::Custom {
                inputs: inputs.into(),
                partials: partials.into(),
            },
        ))
    }

    // ---- differentiation ---------------------------------------------------

    /// Gradients of the scalar `loss` with respect to `wrt`, recorded on the tape.
    ///
    /// Entries of `wrt` that `loss` does not depend on receive zeros.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = loss.0 + 1;
        let mut needed = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needed[w.0] = true;
            }
        }
        for i in 0..n {
            if !needed[i] {
                needed[i] = self.nodes[i].op.inputs().iter().any(|v| needed[v.0]);
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        let seed = Tensor::full(self.shape(loss), 1.0);
        adjoint[loss.0] = Some(self.constant(seed));

        for i in (0..n).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            for (input, contribution) in self.vjp(i, g, &needed)? {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    Some(acc) => self.add(acc, contribution)?,
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(self.shape(*w));
                    self.constant(zeros)
                }
            })
            .collect())
    }

    /// Gradient values of `loss` with respect to `wrt`.
    pub fn backward(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.grad(loss, wrt)?;
        Ok(grads.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn vjp(&mut self, node: usize, g: Var, needed: &[bool]) -> Result<Vec<(Var, Var)>> {
        let need = |v: Var| needed[v.0];
        let op = self.nodes[node].op.clone();
        let out = Var(node);
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if need(b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?)),
            Op::Conv(x, w) => {
                if need(x) {
                    res.push((x, self.conv_input(g, w)?));
                }
                if need(w) {
                    res.push((w, self.conv_kernel(x, g)?));
                }
            }
            Op::ConvInput(g0, w) => {
                if need(g0) {
                    res.push((g0, self.conv2d_3x3(g, w)?));
                }
                if need(w) {
                    res.push((w, self.conv_kernel(g, g0)?));
                }
            }
            Op::ConvKernel(x, g0) => {
                if need(x) {
                    res.push((x, self.conv_input(g0, g)?));
                }
                if need(g0) {
                    res.push((g0, self.conv2d_3x3(x, g)?));
                }
            }
            Op::Relu(x) => {
                let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                res.push((x, self.mul(g, mask)?));
            }
            Op::Add(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    res.push((a, g));
                }
                if need(b) {
                    res.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, f) => res.push((a, self.scale(g, f))),
            Op::MulScalar(x, s) => {
                if need(x) {
                    res.push((x, self.mul_scalar(g, s)?));
                }
                if need(s) {
                    let prod = self.mul(g, x)?;
                    let total = self.sum(prod);
                    let shape = self.shape(s).to_vec();
                    res.push((s, self.reshape(total, &shape)?));
                }
            }
            Op::Sum(x) => {
                let shape = self.shape(x).to_vec();
                res.push((x, self.expand(g, &shape)?));
            }
            Op::Expand(s) => {
                let total = self.sum(g);
                let shape = self.shape(s).to_vec();
                res.push((s, self.reshape(total, &shape)?));
            }
            Op::Mean(x) => {
                let shape = self.shape(x).to_vec();
                let n = self.value(x).numel() as f64;
                let e = self.expand(g, &shape)?;
                res.push((x, self.scale(e, 1.0 / n)));
            }
            Op::LogSoftmax(x) => {
                // dx = g - softmax(x) * rowsum(g), softmax(x) = exp(out)
                let k = self.shape(x)[1];
                let probs = self.exp(out);
                let rs = self.row_sum(g)?;
                let rs = self.row_expand(rs, k)?;
                let p = self.mul(probs, rs)?;
                res.push((x, self.sub(g, p)?));
            }
            Op::Exp(x) => res.push((x, self.mul(g, out)?)),
            Op::RowSum(x) => {
                let k = self.shape(x)[1];
                res.push((x, self.row_expand(g, k)?));
            }
            Op::RowExpand(s) => res.push((s, self.row_sum(g)?)),
            Op::Nll { logp, labels, weights } => {
                let shape = self.shape(logp).to_vec();
                let k = shape[1];
                let mut coef = Tensor::zeros(&shape);
                for (b, (&l, &w)) in labels.iter().zip(weights.iter()).enumerate() {
                    coef.data_mut()[b * k + l] = -w;
                }
                let coef = self.constant(coef);
                res.push((logp, self.mul_scalar(coef, g)?));
            }
            Op::Lerp(a, b, t) => {
                let gt = self.mul_scalar(g, t)?;
                if need(a) {
                    res.push((a, self.sub(g, gt)?));
                }
                if need(b) {
                    res.push((b, gt));
                }
                if need(t) {
                    let diff = self.sub(b, a)?;
                    let prod = self.mul(g, diff)?;
                    let total = self.sum(prod);
                    let shape = self.shape(t).to_vec();
                    res.push((t, self.reshape(total, &shape)?));
                }
            }
            Op::AvgPool2(x) => res.push((x, self.unpool2(g)?)),
            Op::Unpool2(x) => res.push((x, self.avg_pool2(g)?)),
            Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                res.push((x, self.reshape(g, &shape)?));
            }
            Op::ChannelBroadcast(b) => res.push((b, self.channel_reduce(g)?)),
            Op::ChannelReduce(x) => {
                let shape = self.shape(x).to_vec();
                res.push((x, self.channel_broadcast(g, &shape)?));
            }
            Op::Custom { inputs, partials } => {
                for (input, partial) in inputs.iter().zip(partials.iter()) {
                    if !need(*input) {
                        continue;
                    }
                    let p = self.constant(partial.clone());
                    let prod = self.mul(g, p)?;
                    let total = self.sum(prod);
                    let shape = self.shape(*input).to_vec();
                    res.push((*input, self.reshape(total, &shape)?));
                }
            }
        }
        Ok(res)
    }
}
