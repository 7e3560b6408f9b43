//! Tape-recorded computation graph with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` simply walks it in reverse.

use crate::conv::{col2im, im2col, ConvGeometry};
use crate::error::{NumgradError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Abs,
    Sin,
    Cos,
    Softplus,
    Sqrt,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry, out_channels: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeometry, in_channels: usize },
    Unary(Var, Unary),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax(Var),
    LogSoftmax(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the output w.r.t. `v`; `None` when `v` does not require grad
    /// or the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Recorded computation. Build a fresh graph for every forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumgradError {
    NumgradError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> NumgradError {
    NumgradError::InvalidArgument { op, msg: msg.into() }
}

/// Shape bookkeeping for an axis: (outer extent, axis extent, inner extent).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that collects a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    // ---- elementwise binary ops (equal shapes or a single-element operand) ----

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor::from_parts(ta.shape().to_vec(), data))
        } else if tb.numel() == 1 {
            let y = tb.item();
            Ok(ta.map(|x| f(x, y)))
        } else if ta.numel() == 1 {
            let x = ta.item();
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(mismatch(op, ta.shape(), tb.shape()))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let v = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let v = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    // ---- linear algebra ----

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), T::zero(), &mut out, (n as isize, 1));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rank() != 2 {
            return Err(invalid("transpose", format!("expected rank 2, got {:?}", ta.shape())));
        }
        let out = transpose_data(ta.data(), ta.shape()[0], ta.shape()[1]);
        let shape = vec![ta.shape()[1], ta.shape()[0]];
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Transpose(a), rg))
    }

    /// Fully connected layer: `x [n,in]`, `w [out,in]`, `b [out]` → `x·wᵀ + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(mismatch("affine", tx.shape(), tw.shape()));
        }
        if tb.shape() != [tw.shape()[0]] {
            return Err(mismatch("affine(bias)", tw.shape(), tb.shape()));
        }
        let (n, inp, out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(tb.data());
        }
        T::gemm(n, inp, out, tx.data(), (inp as isize, 1), tw.data(), (1, inp as isize), T::one(), &mut y, (out as isize, 1));
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![n, out], y), Op::Affine { x, w, b }, rg))
    }

    /// 2-D convolution: `x [n,c,h,w]`, `w [o,c,k,k]`, `b [o]`, explicit padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[1] || tw.shape()[2] != tw.shape()[3] {
            return Err(mismatch("conv2d", tx.shape(), tw.shape()));
        }
        let o = tw.shape()[0];
        if tb.shape() != [o] {
            return Err(mismatch("conv2d(bias)", tw.shape(), tb.shape()));
        }
        let (n, c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let geom = ConvGeometry::new(c, h, wd, tw.shape()[2], stride, pad)
            .ok_or_else(|| invalid("conv2d", format!("kernel {:?} does not fit input {:?}", tw.shape(), tx.shape())))?;
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = vec![T::zero(); n * o * ncols];
        for s in 0..n {
            im2col(&tx.data()[s * geom.plane()..(s + 1) * geom.plane()], &geom, &mut cols);
            let dst = &mut out[s * o * ncols..(s + 1) * o * ncols];
            for (oc, line) in dst.chunks_mut(ncols).enumerate() {
                line.fill(tb.data()[oc]);
            }
            T::gemm(o, rows, ncols, tw.data(), (rows as isize, 1), &cols, (ncols as isize, 1), T::one(), dst, (ncols as isize, 1));
        }
        let shape = vec![n, o, geom.out_height, geom.out_width];
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv2d { x, w, b, geom, out_channels: o }, rg))
    }

    /// Transposed 2-D convolution: `x [n,c,h,w]`, `w [c,o,k,k]`, `b [o]`.
    /// Output extent is `(h−1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[0] || tw.shape()[2] != tw.shape()[3] {
            return Err(mismatch("conv_transpose2d", tx.shape(), tw.shape()));
        }
        let (c, o, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if tb.shape() != [o] {
            return Err(mismatch("conv_transpose2d(bias)", tw.shape(), tb.shape()));
        }
        let (n, h, wd) = (tx.shape()[0], tx.shape()[2], tx.shape()[3]);
        if stride == 0 || (h - 1) * stride + k < 2 * pad + 1 || (wd - 1) * stride + k < 2 * pad + 1 {
            return Err(invalid("conv_transpose2d", format!("invalid stride/pad for input {:?}", tx.shape())));
        }
        let (ho, wo) = ((h - 1) * stride + k - 2 * pad, (wd - 1) * stride + k - 2 * pad);
        // The adjoint geometry: a forward conv from the output plane back to the input plane.
        let geom = ConvGeometry::new(o, ho, wo, k, stride, pad)
            .filter(|g| g.out_height == h && g.out_width == wd)
            .ok_or_else(|| invalid("conv_transpose2d", "inconsistent geometry"))?;
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = vec![T::zero(); n * geom.plane()];
        for s in 0..n {
            let xs = &tx.data()[s * c * ncols..(s + 1) * c * ncols];
            // cols[o·k·k, h·w] = wᵀ · x
            T::gemm(rows, c, ncols, tw.data(), (1, rows as isize), xs, (ncols as isize, 1), T::zero(), &mut cols, (ncols as isize, 1));
            let dst = &mut out[s * geom.plane()..(s + 1) * geom.plane()];
            for (oc, plane) in dst.chunks_mut(ho * wo).enumerate() {
                plane.fill(tb.data()[oc]);
            }
            col2im(&cols, &geom, dst);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![n, o, ho, wo], out),
            Op::ConvTranspose2d { x, w, b, geom, in_channels: c },
            rg,
        ))
    }

    // ---- elementwise unary ops ----

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Relu => |x| if x > T::zero() { x } else { T::zero() },
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => |x| x.tanh(),
            Unary::Exp => |x| x.exp(),
            Unary::Log => |x| x.ln(),
            Unary::Square => |x| x * x,
            Unary::Abs => |x| x.abs(),
            Unary::Sin => |x| x.sin(),
            Unary::Cos => |x| x.cos(),
            Unary::Softplus => softplus,
            Unary::Sqrt => |x| x.sqrt(),
        };
        let v = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(v, Op::Unary(a, kind), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }
    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }
    /// `log(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let v = self.nodes[a.0].value.map(|x| x.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    // ---- reductions and shape ops ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: T = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum out one axis (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if axis >= t.rank() {
            return Err(invalid("sum_axis", format!("axis {} out of range for {:?}", axis, t.shape())));
        }
        let (outer, ext, inner) = split_axis(t.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let src = &t.data()[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis { x: a, axis }, rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ext = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / ext as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.nodes[a.0].value.clone().reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {} out of range for {:?}", axis, base)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = &self.nodes[p.0].value;
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if axis >= t.rank() || start >= end || end > t.shape()[axis] {
            return Err(invalid("slice", format!("range {}..{} on axis {} of {:?}", start, end, axis, t.shape())));
        }
        let (outer, ext, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&t.data()[(o * ext + start) * inner..(o * ext + end) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = end - start;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { x: a, axis, start }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let d = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z = z + *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let d = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg)
    }

    // ---- reverse pass ----

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(NumgradError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::full(out.shape().to_vec(), T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // intermediate gradients are dropped once propagated; leaves keep theirs
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e = *e + *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Gradient for an operand of a broadcasting binary op.
    fn reduce_to(&self, v: Var, g: Tensor<T>) -> Tensor<T> {
        let target = self.nodes[v.0].value.shape();
        if g.shape() == target {
            g
        } else {
            let s: T = g.data().iter().copied().sum();
            Tensor::from_parts(target.to_vec(), vec![s])
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    let d = self.reduce_to(*a, g.clone());
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = self.reduce_to(*b, g.clone());
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    let d = self.reduce_to(*a, g.clone());
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = self.reduce_to(*b, g.map(|x| -x));
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Mul(a, b) => {
                for (me, other) in [(*a, *b), (*b, *a)] {
                    if !self.rg(me) {
                        continue;
                    }
                    let o = val(other);
                    let full = if o.numel() == 1 {
                        let y = o.item();
                        g.map(|x| x * y)
                    } else {
                        let data = g.data().iter().zip(o.data()).map(|(&x, &y)| x * y).collect();
                        Tensor::from_parts(g.shape().to_vec(), data)
                    };
                    let d = self.reduce_to(me, full);
                    self.accumulate(grads, me, d);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let mut d = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), (n as isize, 1), tb.data(), (1, n as isize), T::zero(), &mut d, (k as isize, 1));
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], d));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let mut d = vec![T::zero(); k * n];
                    T::gemm(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), T::zero(), &mut d, (n as isize, 1));
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], d));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let d = transpose_data(g.data(), r, c);
                self.accumulate(grads, *a, Tensor::from_parts(vec![c, r], d));
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (n, inp, out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                if self.rg(*x) {
                    let mut d = vec![T::zero(); n * inp];
                    T::gemm(n, out, inp, g.data(), (out as isize, 1), tw.data(), (inp as isize, 1), T::zero(), &mut d, (inp as isize, 1));
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, inp], d));
                }
                if self.rg(*w) {
                    let mut d = vec![T::zero(); out * inp];
                    T::gemm(out, n, inp, g.data(), (1, out as isize), tx.data(), (inp as isize, 1), T::zero(), &mut d, (inp as isize, 1));
                    self.accumulate(grads, *w, Tensor::from_parts(vec![out, inp], d));
                }
                if self.rg(*b) {
                    let mut d = vec![T::zero(); out];
                    for row in g.data().chunks(out) {
                        for (acc, &v) in d.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![out], d));
                }
            }
            Op::Conv2d { x, w, b, geom, out_channels } => {
                let (tx, tw) = (val(*x), val(*w));
                let n = tx.shape()[0];
                let o = *out_channels;
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let mut cols = vec![T::zero(); rows * ncols];
                let mut dcols = vec![T::zero(); rows * ncols];
                let mut dw = vec![T::zero(); o * rows];
                let mut dx = if self.rg(*x) { vec![T::zero(); tx.numel()] } else { Vec::new() };
                let mut db = vec![T::zero(); o];
                for s in 0..n {
                    let gs = &g.data()[s * o * ncols..(s + 1) * o * ncols];
                    if self.rg(*w) {
                        im2col(&tx.data()[s * geom.plane()..(s + 1) * geom.plane()], geom, &mut cols);
                        T::gemm(o, ncols, rows, gs, (ncols as isize, 1), &cols, (1, ncols as isize), T::one(), &mut dw, (rows as isize, 1));
                    }
                    if self.rg(*x) {
                        T::gemm(rows, o, ncols, tw.data(), (1, rows as isize), gs, (ncols as isize, 1), T::zero(), &mut dcols, (ncols as isize, 1));
                        col2im(&dcols, geom, &mut dx[s * geom.plane()..(s + 1) * geom.plane()]);
                    }
                    for (oc, line) in gs.chunks(ncols).enumerate() {
                        db[oc] = db[oc] + line.iter().copied().sum::<T>();
                    }
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, Tensor::from_parts(tx.shape().to_vec(), dx));
                }
                self.accumulate(grads, *w, Tensor::from_parts(tw.shape().to_vec(), dw));
                self.accumulate(grads, *b, Tensor::from_parts(vec![o], db));
            }
            Op::ConvTranspose2d { x, w, b, geom, in_channels } => {
                let (tx, tw) = (val(*x), val(*w));
                let n = tx.shape()[0];
                let c = *in_channels;
                let o = geom.channels;
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let mut cols = vec![T::zero(); rows * ncols];
                let mut dw = vec![T::zero(); c * rows];
                let mut dx = vec![T::zero(); tx.numel()];
                let mut db = vec![T::zero(); o];
                let plane = geom.height * geom.width;
                for s in 0..n {
                    let gs = &g.data()[s * geom.plane()..(s + 1) * geom.plane()];
                    im2col(gs, geom, &mut cols);
                    let xs = &tx.data()[s * c * ncols..(s + 1) * c * ncols];
                    if self.rg(*x) {
                        T::gemm(c, rows, ncols, tw.data(), (rows as isize, 1), &cols, (ncols as isize, 1), T::zero(), &mut dx[s * c * ncols..(s + 1) * c * ncols], (ncols as isize, 1));
                    }
                    if self.rg(*w) {
                        T::gemm(c, ncols, rows, xs, (ncols as isize, 1), &cols, (1, ncols as isize), T::one(), &mut dw, (rows as isize, 1));
                    }
                    for (oc, p) in gs.chunks(plane).enumerate() {
                        db[oc] = db[oc] + p.iter().copied().sum::<T>();
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(tx.shape().to_vec(), dx));
                self.accumulate(grads, *w, Tensor::from_parts(tw.shape().to_vec(), dw));
                self.accumulate(grads, *b, Tensor::from_parts(vec![o], db));
            }
            Op::Unary(a, kind) => {
                let (x, y) = (val(*a).data(), node.value.data());
                let two = T::of(2.0);
                let half = T::of(0.5);
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gv, (&xv, &yv))| {
                        let local = match kind {
                            Unary::Relu => if xv > T::zero() { T::one() } else { T::zero() },
                            Unary::Sigmoid => yv * (T::one() - yv),
                            Unary::Tanh => T::one() - yv * yv,
                            Unary::Exp => yv,
                            Unary::Log => T::one() / xv,
                            Unary::Square => two * xv,
                            Unary::Abs => if xv > T::zero() { T::one() } else if xv < T::zero() { -T::one() } else { T::zero() },
                            Unary::Sin => xv.cos(),
                            Unary::Cos => -xv.sin(),
                            Unary::Softplus => sigmoid(xv),
                            Unary::Sqrt => half / yv,
                        };
                        gv * local
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                let d = g.data().iter().zip(x).map(|(&gv, &xv)| if xv > *lo && xv < *hi { gv } else { T::zero() }).collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sum(a) => {
                let shape = val(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let v = g.item() / T::of(t.numel() as f64);
                self.accumulate(grads, *a, Tensor::full(t.shape().to_vec(), v));
            }
            Op::SumAxis { x, axis } => {
                let t = val(*x);
                let (outer, ext, inner) = split_axis(t.shape(), *axis);
                let mut d = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    for _ in 0..ext {
                        d.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(t.shape().to_vec(), d));
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let t = val(*p);
                    let ext = t.shape()[*axis];
                    if self.rg(*p) {
                        let mut d = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + ext * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::from_parts(t.shape().to_vec(), d));
                    }
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let t = val(*x);
                let (outer, ext, inner) = split_axis(t.shape(), *axis);
                let len = g.shape()[*axis];
                let mut d = vec![T::zero(); t.numel()];
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(t.shape().to_vec(), d));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dim = *g.shape().last().unwrap_or(&1);
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(dim).zip(y.chunks(dim)).zip(g.data().chunks(dim)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let dim = *g.shape().last().unwrap_or(&1);
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(dim).zip(y.chunks(dim)).zip(g.data().chunks(dim)) {
                    let total: T = gr.iter().copied().sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1+eˣ) = max(x,0) + log(1+e^{−|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn transpose_data<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
