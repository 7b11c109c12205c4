use super::lstm::LstmTape;
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Sum(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var, usize),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    L2Normalize { input: Var, axis: usize, norms: Vec<T> },
    FrobeniusSq(Var),
    Lstm(Box<LstmTape<T>>),
}

pub(super) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// A tape of operations over [`Tensor`]s.
pub struct Graph<T> {
    pub(super) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{op}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

fn check_axis(shape: &[usize], axis: usize, op: &str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!("{op}: axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(super) fn sigmoid_scalar<T: Real>(x: T) -> T {
    sigmoid(x)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(super) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
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
        self.rg(v)
    }

    /// Gradient populated by the last [`Self::backward`], if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn unary(&mut self, a: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va.shape(), vb.shape(), name)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.unary(a, v, Op::Scale(a, c))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::invalid(format!("matmul: {:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose: rank-2 input required, got {:?}",
                va.shape()
            )));
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let d = va.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let v = Tensor::new(vec![n, m], out)?;
        Ok(self.unary(a, v, Op::Transpose(a)))
    }

    /// Adds a vector along the last axis of `a` (row expansion).
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = *va.shape().last().unwrap_or(&1);
        if vb.rank() != 1 || vb.shape()[0] != n || va.rank() == 0 {
            return Err(Error::invalid(format!(
                "add_row_bias: {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let b = vb.data();
        let data = va
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(v, Op::AddRowBias(a, bias), rg))
    }

    /// Multiplies row `i` of a `[m, n]` array by `s[i]` (column expansion).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (va, vs) = (self.value(a), self.value(s));
        if va.rank() != 2 || vs.rank() != 1 || vs.shape()[0] != va.shape()[0] {
            return Err(Error::invalid(format!(
                "scale_rows: {:?} by {:?}",
                va.shape(),
                vs.shape()
            )));
        }
        let n = va.shape()[1];
        let sd = vs.data();
        let data = va
            .data()
            .chunks(n.max(1))
            .zip(sd)
            .flat_map(|(row, &c)| row.iter().map(move |&x| x * c))
            .collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(v, Op::ScaleRows(a, s), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).numel().max(1)).expect("count");
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        check_axis(va.shape(), axis, "sum_axis")?;
        let (outer, len, inner) = Tensor::<T>::split_at_axis(va.shape(), axis);
        let d = va.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + d[base + i];
                }
            }
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.unary(a, v, Op::SumAxis(a, axis)))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis(self.shape(a), axis, "mean_axis")?;
        let n = T::from_usize(self.shape(a)[axis].max(1)).expect("count");
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, T::one() / n))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        check_axis(&base, axis, "concat")?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::invalid(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = Tensor::<T>::split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let vv = self.value(v);
                let len = vv.shape()[axis];
                out.extend_from_slice(&vv.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        check_axis(va.shape(), axis, "slice")?;
        if start > end || end > va.shape()[axis] {
            return Err(Error::invalid(format!(
                "slice: {start}..{end} out of range for {:?} axis {axis}",
                va.shape()
            )));
        }
        let (outer, len, inner) = Tensor::<T>::split_at_axis(va.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&va.data()[base..base + width * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] = width;
        let v = Tensor::new(shape, out)?;
        Ok(self.unary(a, v, Op::Slice { input: a, axis, start }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.unary(a, v, Op::Reshape(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.unary(a, v, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.unary(a, v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        self.unary(a, v, Op::Sqrt(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        check_axis(va.shape(), axis, "softmax")?;
        let (outer, len, inner) = Tensor::<T>::split_at_axis(va.shape(), axis);
        let d = va.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[idx(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (d[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total = total + e;
                }
                for l in 0..len {
                    out[idx(l)] = out[idx(l)] / total;
                }
            }
        }
        let v = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.unary(a, v, Op::Softmax(a, axis)))
    }

    /// Scales every slice along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        check_axis(va.shape(), axis, "l2_normalize")?;
        let (outer, len, inner) = Tensor::<T>::split_at_axis(va.shape(), axis);
        let d = va.data();
        let tiny = T::from_f64_lossy(1e-12);
        let mut norms = Vec::with_capacity(outer * inner);
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let sq: T = (0..len).map(|l| d[idx(l)] * d[idx(l)]).sum();
                let norm = sq.sqrt().max(tiny);
                for l in 0..len {
                    out[idx(l)] = d[idx(l)] / norm;
                }
                norms.push(norm);
            }
        }
        let v = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.unary(a, v, Op::L2Normalize { input: a, axis, norms }))
    }

    /// Squared Frobenius norm (sum of squares), a scalar.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        self.unary(a, Tensor::scalar(s), Op::FrobeniusSq(a))
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires them. Contributions from fan-out accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            self.propagate(i, g, lower);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let gd = g.data();
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                acc(*b, &mut |d| d.iter_mut().zip(gd).for_each(|(x, &y)| *x = *x - y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |d| {
                    for ((x, &y), &z) in d.iter_mut().zip(gd).zip(vb) {
                        *x = *x + y * z;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, &y), &z) in d.iter_mut().zip(gd).zip(va) {
                        *x = *x + y * z;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(gd).for_each(|(x, &y)| *x = *x + y * *c)),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                acc(*a, &mut |d| T::gemm(m, n, k, gd, false, vb.data(), true, d, true));
                acc(*b, &mut |d| T::gemm(k, m, n, va.data(), true, gd, false, d, true));
            }
            Op::Transpose(a) => {
                let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] = d[r * n + c] + gd[c * m + r];
                        }
                    }
                });
            }
            Op::AddRowBias(a, b) => {
                acc(*a, &mut |d| add_into(d, gd));
                let n = val(*b).numel();
                acc(*b, &mut |d| {
                    for row in gd.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::ScaleRows(a, s) => {
                let va = val(*a);
                let n = va.shape()[1].max(1);
                let sd = val(*s).data();
                acc(*a, &mut |d| {
                    for ((drow, grow), &c) in d.chunks_mut(n).zip(gd.chunks(n)).zip(sd) {
                        drow.iter_mut().zip(grow).for_each(|(x, &y)| *x = *x + y * c);
                    }
                });
                acc(*s, &mut |d| {
                    for ((x, grow), arow) in d.iter_mut().zip(gd.chunks(n)).zip(va.data().chunks(n)) {
                        *x = *x + grow.iter().zip(arow).map(|(&p, &q)| p * q).sum();
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x = *x + g0));
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = Tensor::<T>::split_at_axis(val(*a).shape(), *axis);
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for i in 0..inner {
                                d[base + i] = d[base + i] + gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Concat(inputs, axis) => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = Tensor::<T>::split_at_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = val(v).shape()[*axis];
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut d[o * len * inner..(o + 1) * len * inner],
                                &gd[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, len, inner) = Tensor::<T>::split_at_axis(val(*input).shape(), *axis);
                let width = node.value.shape()[*axis];
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        let dst = (o * len + start) * inner;
                        add_into(
                            &mut d[dst..dst + width * inner],
                            &gd[o * width * inner..(o + 1) * width * inner],
                        );
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, gd)),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((x, &g), &s) in d.iter_mut().zip(gd).zip(y) {
                        *x = *x + g * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((x, &g), &t) in d.iter_mut().zip(gd).zip(y) {
                        *x = *x + g * (T::one() - t * t);
                    }
                });
            }
            Op::Log(a) => {
                let xa = val(*a).data();
                acc(*a, &mut |d| {
                    for ((x, &g), &v) in d.iter_mut().zip(gd).zip(xa) {
                        *x = *x + g / v;
                    }
                });
            }
            Op::Abs(a) => {
                let xa = val(*a).data();
                acc(*a, &mut |d| {
                    for ((x, &g), &v) in d.iter_mut().zip(gd).zip(xa) {
                        // Subgradient 0 at the kink.
                        let s = if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *x = *x + g * s;
                    }
                });
            }
            Op::Square(a) => {
                let xa = val(*a).data();
                let two = T::one() + T::one();
                acc(*a, &mut |d| {
                    for ((x, &g), &v) in d.iter_mut().zip(gd).zip(xa) {
                        *x = *x + g * two * v;
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                let two = T::one() + T::one();
                acc(*a, &mut |d| {
                    for ((x, &g), &s) in d.iter_mut().zip(gd).zip(y) {
                        if s > T::zero() {
                            *x = *x + g / (two * s);
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = Tensor::<T>::split_at_axis(node.value.shape(), *axis);
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: T = (0..len).map(|l| gd[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                let k = idx(l);
                                d[k] = d[k] + y[k] * (gd[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::L2Normalize { input, axis, norms } => {
                let y = node.value.data();
                let (outer, len, inner) = Tensor::<T>::split_at_axis(node.value.shape(), *axis);
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let norm = norms[o * inner + i];
                            let dot: T = (0..len).map(|l| gd[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                let k = idx(l);
                                d[k] = d[k] + (gd[k] - y[k] * dot) / norm;
                            }
                        }
                    }
                });
            }
            Op::FrobeniusSq(a) => {
                let xa = val(*a).data();
                let g2 = gd[0] + gd[0];
                acc(*a, &mut |d| {
                    for (x, &v) in d.iter_mut().zip(xa) {
                        *x = *x + g2 * v;
                    }
                });
            }
            Op::Lstm(tape) => {
                let w = val(tape.w_hh);
                let (dgx, dw) = tape.backward(&node.value, w, g);
                acc(tape.gates_x, &mut |d| add_into(d, dgx.data()));
                acc(tape.w_hh, &mut |d| add_into(d, dw.data()));
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x = *x + y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_value_and_adjoint() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0f64), true);
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn frobenius_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = g.frobenius_sq(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let p = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, -1.5]);
        let mut g = Graph::new();
        let x = g.leaf(p.clone(), true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));

        let mut g = Graph::new();
        let x = g.leaf(p.clone(), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        let expected: Vec<f64> = p.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn fan_out_accumulates_exactly_twice() {
        let p = t(&[3], &[0.3, -0.7, 1.1]);
        let grad_of = |twice: bool| {
            let mut g = Graph::new();
            let x = g.leaf(p.clone(), true);
            let f1 = {
                let s = g.tanh(x);
                let q = g.square(s);
                g.sum(q)
            };
            let loss = if twice {
                let f2 = {
                    let s = g.tanh(x);
                    let q = g.square(s);
                    g.sum(q)
                };
                g.add(f1, f2).unwrap()
            } else {
                f1
            };
            g.backward(loss).unwrap();
            g.grad(x).unwrap().clone()
        };
        let once = grad_of(false);
        let twice = grad_of(true);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, b).is_err());
        let m = g.constant(t(&[2, 3], &[0.0; 6]));
        let n = g.constant(t(&[2, 3], &[0.0; 6]));
        assert!(g.matmul(m, n).is_err());
        assert!(g.softmax(m, 2).is_err());
        assert!(g.slice(m, 1, 2, 4).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice(c, 1, 1, 3).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 5.0, 4.0, 6.0]);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    }
}
