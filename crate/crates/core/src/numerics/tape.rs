//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in execution order. Parameters are
//! borrowed from a [`ParamStore`] instead of copied, so a tape is cheap to
//! build per forward pass and many tapes may read one store concurrently.
//! [`Tape::backward`] walks the recorded nodes in reverse and returns the
//! accumulated gradients for every parameter and every input leaf.

use std::collections::HashMap;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation identity, used for reporting and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    Gather,
    Matmul,
    Conv1d,
    BatchNorm,
    ChannelAffine,
    Relu,
    Sigmoid,
    Softmax,
    LogSoftmax,
    MaxPool1d,
    ReduceMean,
    ReduceMax,
    Concat,
    Slice,
    Reshape,
    Dropout,
    AddBias,
    OuterAdd,
    Add,
    Mul,
    Scale,
    Sum,
    Pick,
    LnClamped,
}

enum Op<T> {
    Input,
    Param(ParamId),
    Gather { table: Var, ids: Vec<u32> },
    Matmul(Var, Var),
    Conv1d { x: Var, w: Var, b: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    ChannelAffine { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    MaxPool1d { x: Var, argmax: Vec<Option<usize>> },
    ReduceMean { x: Var, axis: usize },
    ReduceMax { x: Var, argmax: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Dropout { x: Var, mask: Vec<T> },
    AddBias { x: Var, b: Var },
    OuterAdd(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, factor: T },
    Sum(Var),
    Pick { x: Var, indices: Vec<usize> },
    LnClamped { x: Var, floor: T },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::Gather { .. } => OpKind::Gather,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::ChannelAffine { .. } => OpKind::ChannelAffine,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::MaxPool1d { .. } => OpKind::MaxPool1d,
            Op::ReduceMean { .. } => OpKind::ReduceMean,
            Op::ReduceMax { .. } => OpKind::ReduceMax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::OuterAdd(..) => OpKind::OuterAdd,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Pick { .. } => OpKind::Pick,
            Op::LnClamped { .. } => OpKind::LnClamped,
        }
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

/// Per-channel statistics of one batch-norm forward pass in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
    params: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. an input leaf, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v.0).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds the parameter gradients into each trainable tensor's grad slot.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (i, g) in self.params.iter().enumerate() {
            if let Some(g) = g {
                store.get_mut(ParamId(i)).tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Offsets for iterating one axis of a row-major shape.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &e)| e)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Recording context for one differentiable computation.
pub struct Tape<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
    nodes: Vec<Node<T>>,
    strict: bool,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
            strict: false,
            fault: None,
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    /// In strict mode every operation fails on a non-finite output.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    /// Test hook: scales every backward contribution of `kind` by 1.5.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => {
                &self
                    .params
                    .expect("param node without store")
                    .get(*id)
                    .tensor
            }
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.strict && !value.is_finite() {
            return Err(Error::NonFinite(kind_name(op.kind())));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn raw(&self, shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op produced consistent shape")
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf referring to a parameter of the borrowed store (one node per parameter).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Embedding lookup: `table` is `[V × d]`, result is `[d × ids.len()]`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather"));
        }
        let t = self.value(table);
        let (vocab, dim) = match t.shape() {
            [v, d] => (*v, *d),
            s => return Err(Error::shape("gather", s, &[ids.len()])),
        };
        let m = ids.len();
        let src = t.data();
        let mut out = vec![T::zero(); dim * m];
        for (pos, &id) in ids.iter().enumerate() {
            let id_us = id as usize;
            if id_us >= vocab {
                return Err(Error::Vocabulary { id, size: vocab });
            }
            for c in 0..dim {
                out[c * m + pos] = src[id_us * dim + c];
            }
        }
        let value = self.raw(vec![dim, m], out);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, k, c) = match (av.shape(), bv.shape()) {
            ([r, k1], [k2, c]) if k1 == k2 => (*r, *k1, *c),
            (sa, sb) => return Err(Error::shape("matmul", sa, sb)),
        };
        let out = matmul_raw(av.data(), bv.data(), r, k, c);
        let value = self.raw(vec![r, c], out);
        self.push(value, Op::Matmul(a, b))
    }

    /// Kernel-3, stride-1 cross-correlation with one zero frame of padding per side.
    ///
    /// `x` is `[c_in × L]`, `w` is `[c_out × c_in × 3]`, `b` is `[c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (ci, len) = match xv.shape() {
            [ci, l] => (*ci, *l),
            s => return Err(Error::shape("conv1d", s, wv.shape())),
        };
        let co = match wv.shape() {
            [co, wi, 3] if *wi == ci => *co,
            s => return Err(Error::shape("conv1d", xv.shape(), s)),
        };
        if bv.shape() != [co] {
            return Err(Error::shape("conv1d", wv.shape(), bv.shape()));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![T::zero(); co * len];
        for o in 0..co {
            let row = &mut out[o * len..(o + 1) * len];
            row.iter_mut().for_each(|y| *y = bd[o]);
            for i in 0..ci {
                let xr = &xd[i * len..(i + 1) * len];
                let wk = &wd[(o * ci + i) * 3..(o * ci + i) * 3 + 3];
                for t in 0..len {
                    let mut acc = wk[1] * xr[t];
                    if t > 0 {
                        acc += wk[0] * xr[t - 1];
                    }
                    if t + 1 < len {
                        acc += wk[2] * xr[t + 1];
                    }
                    row[t] += acc;
                }
            }
        }
        let value = self.raw(vec![co, len], out);
        self.push(value, Op::Conv1d { x, w, b })
    }

    /// Batch normalization over the length axis of a `[C × L]` tensor using batch statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x);
        let (c, len) = match xv.shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::shape("batchnorm", s, self.value(gamma).shape())),
        };
        self.check_channel_params("batchnorm", c, gamma, beta)?;
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let xd = xv.data();
        let n = T::from_usize_lossy(len);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); c * len];
        let mut out = vec![T::zero(); c * len];
        for ch in 0..c {
            let row = &xd[ch * len..(ch + 1) * len];
            let mu = row.iter().copied().sum::<T>() / n;
            let v = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / n;
            let is = T::one() / (v + eps).sqrt();
            for t in 0..len {
                let h = (row[t] - mu) * is;
                xhat[ch * len + t] = h;
                out[ch * len + t] = gd[ch] * h + bd[ch];
            }
            mean[ch] = mu;
            var[ch] = v;
            inv_std[ch] = is;
        }
        let value = self.raw(vec![c, len], out);
        let stats = BatchStats {
            mean,
            var,
            count: len,
        };
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )?;
        Ok((v, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (c, len) = match xv.shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::shape("batchnorm", s, self.value(gamma).shape())),
        };
        self.check_channel_params("batchnorm", c, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm", &[c], &[mean.len(), var.len()]));
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let xd = xv.data();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); c * len];
        let mut out = vec![T::zero(); c * len];
        for ch in 0..c {
            for t in 0..len {
                let h = (xd[ch * len + t] - mean[ch]) * inv_std[ch];
                xhat[ch * len + t] = h;
                out[ch * len + t] = gd[ch] * h + bd[ch];
            }
        }
        let value = self.raw(vec![c, len], out);
        self.push(
            value,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    fn check_channel_params(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape(op, &[c], self.value(p).shape()));
            }
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = self.raw(xv.shape().to_vec(), data);
        self.push(value, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, stable_sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.map(x, |v| v * factor, Op::Scale { x, factor })
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, x: Var, floor: T) -> Result<Var> {
        self.map(
            x,
            |v| if v > floor { v.ln() } else { floor.ln() },
            Op::LnClamped { x, floor },
        )
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::shape(op, s, &[axis]));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let data = softmax_along(xv.data(), xv.shape(), axis, false);
        let value = self.raw(xv.shape().to_vec(), data);
        self.push(value, Op::Softmax { x, axis })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let xv = self.value(x);
        let data = softmax_along(xv.data(), xv.shape(), axis, true);
        let value = self.raw(xv.shape().to_vec(), data);
        self.push(value, Op::LogSoftmax { x, axis })
    }

    /// Window 3, stride 2, one zero frame of padding per side: `[C × L] → [C × ⌈L/2⌉]`.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (c, len) = match xv.shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::shape("maxpool1d", s, &[])),
        };
        let out_len = len.div_ceil(2);
        let xd = xv.data();
        let mut out = vec![T::zero(); c * out_len];
        let mut argmax = vec![None; c * out_len];
        for ch in 0..c {
            for i in 0..out_len {
                let mut best = T::neg_infinity();
                let mut arg = None;
                for pos in (2 * i) as isize - 1..=(2 * i) as isize + 1 {
                    let (val, idx) = if pos < 0 || pos as usize >= len {
                        (T::zero(), None)
                    } else {
                        let k = ch * len + pos as usize;
                        (xd[k], Some(k))
                    };
                    if val > best {
                        best = val;
                        arg = idx;
                    }
                }
                out[ch * out_len + i] = best;
                argmax[ch * out_len + i] = arg;
            }
        }
        let value = self.raw(vec![c, out_len], out);
        self.push(value, Op::MaxPool1d { x, argmax })
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("reduce_mean", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let xd = xv.data();
        let n = T::from_usize_lossy(len);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        let value = self.raw(reduced_shape(xv.shape(), axis), out);
        self.push(value, Op::ReduceMean { x, axis })
    }

    /// Maximum along `axis`; ties resolve to the lowest index.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("reduce_max", x, axis)?;
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let xd = xv.data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    let slot = o * inner + i;
                    if xd[base + i] > out[slot] || k == 0 {
                        out[slot] = xd[base + i];
                        argmax[slot] = base + i;
                    }
                }
            }
        }
        let value = self.raw(reduced_shape(xv.shape(), axis), out);
        self.push(value, Op::ReduceMax { x, argmax })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptySequence("concat"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let xv = self.value(x);
                let chunk = xv.shape()[axis] * inner;
                out.extend_from_slice(&xv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = self.raw(shape, out);
        self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let xv = self.value(x);
        let full = xv.shape()[axis];
        if len == 0 || start + len > full {
            return Err(Error::shape("slice", xv.shape(), &[start, len]));
        }
        let (outer, _, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = self.raw(shape, out);
        self.push(value, Op::Slice { x, axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x))
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-rate)`).
    pub fn apply_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::shape("dropout", xv.shape(), &[mask.len()]));
        }
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = self.raw(xv.shape().to_vec(), data);
        self.push(value, Op::Dropout { x, mask })
    }

    /// Adds `b[c]` to every element of channel `c` of `x` (`x` is `[C × …]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.shape()[0];
        if bv.shape() != [c] {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let inner = xv.numel() / c;
        let bd = bv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| v + bd[k / inner])
            .collect();
        let value = self.raw(xv.shape().to_vec(), data);
        self.push(value, Op::AddBias { x, b })
    }

    /// `out[c, i, j] = u[c, i] + v[c, j]`.
    pub fn outer_add(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        let (c, m, n) = match (uv.shape(), vv.shape()) {
            ([c1, m], [c2, n]) if c1 == c2 => (*c1, *m, *n),
            (a, b) => return Err(Error::shape("outer_add", a, b)),
        };
        let (ud, vd) = (uv.data(), vv.data());
        let mut out = Vec::with_capacity(c * m * n);
        for ch in 0..c {
            let vr = &vd[ch * n..(ch + 1) * n];
            for i in 0..m {
                let a = ud[ch * m + i];
                out.extend(vr.iter().map(|&b| a + b));
            }
        }
        let value = self.raw(vec![c, m, n], out);
        self.push(value, Op::OuterAdd(u, v))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = self.raw(av.shape().to_vec(), data);
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Selects flat elements of `x` into a 1-D tensor.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::EmptySequence("pick"));
        }
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.numel()) {
            return Err(Error::shape("pick", xv.shape(), &[bad]));
        }
        let data = indices.iter().map(|&i| xv.data()[i]).collect();
        let value = self.raw(vec![indices.len()], data);
        self.push(
            value,
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                lv.shape()
            )));
        }
        let n_params = self.params.map_or(0, ParamStore::len);
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            leaves: HashMap::new(),
            params: vec![None; n_params],
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    out.leaves.insert(idx, g);
                    continue;
                }
                Op::Param(id) => {
                    if self.params.expect("store").get(*id).tensor.requires_grad() {
                        out.params[id.0] = Some(g);
                    }
                    continue;
                }
                _ => {}
            }
            let mut contribs = self.backward_node(idx, &g);
            if self.fault == Some(node.op.kind()) {
                let f = T::lit(1.5);
                for (_, d) in &mut contribs {
                    d.iter_mut().for_each(|x| *x *= f);
                }
            }
            for (v, d) in contribs {
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref().expect("op node has value");
        match &node.op {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let dim = t.shape()[1];
                let m = ids.len();
                let mut gt = vec![T::zero(); t.numel()];
                for (pos, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        gt[id as usize * dim + c] += g[c * m + pos];
                    }
                }
                vec![(*table, gt)]
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k) = (av.shape()[0], av.shape()[1]);
                let c = bv.shape()[1];
                // ga = g · bᵀ ; gb = aᵀ · g
                let mut ga = vec![T::zero(); r * k];
                let bd = bv.data();
                for i in 0..r {
                    let grow = &g[i * c..(i + 1) * c];
                    for kk in 0..k {
                        let brow = &bd[kk * c..(kk + 1) * c];
                        ga[i * k + kk] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                    }
                }
                let mut gb = vec![T::zero(); k * c];
                let ad = av.data();
                for i in 0..r {
                    let grow = &g[i * c..(i + 1) * c];
                    for kk in 0..k {
                        let a_ik = ad[i * k + kk];
                        if a_ik == T::zero() {
                            continue;
                        }
                        let out = &mut gb[kk * c..(kk + 1) * c];
                        for (o, &gv) in out.iter_mut().zip(grow) {
                            *o += a_ik * gv;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Conv1d { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (ci, len) = (xv.shape()[0], xv.shape()[1]);
                let co = wv.shape()[0];
                let (xd, wd) = (xv.data(), wv.data());
                let mut gx = vec![T::zero(); ci * len];
                let mut gw = vec![T::zero(); wv.numel()];
                let mut gb = vec![T::zero(); co];
                for o in 0..co {
                    let grow = &g[o * len..(o + 1) * len];
                    gb[o] = grow.iter().copied().sum();
                    for i in 0..ci {
                        let xr = &xd[i * len..(i + 1) * len];
                        let wbase = (o * ci + i) * 3;
                        let gxr = &mut gx[i * len..(i + 1) * len];
                        let (mut g0, mut g1, mut g2) = (T::zero(), T::zero(), T::zero());
                        for t in 0..len {
                            let gt = grow[t];
                            g1 += gt * xr[t];
                            gxr[t] += wd[wbase + 1] * gt;
                            if t > 0 {
                                g0 += gt * xr[t - 1];
                                gxr[t - 1] += wd[wbase] * gt;
                            }
                            if t + 1 < len {
                                g2 += gt * xr[t + 1];
                                gxr[t + 1] += wd[wbase + 2] * gt;
                            }
                        }
                        gw[wbase] += g0;
                        gw[wbase + 1] += g1;
                        gw[wbase + 2] += g2;
                    }
                }
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gamma).data();
                let (c, len) = (y.shape()[0], y.shape()[1]);
                let n = T::from_usize_lossy(len);
                let mut gx = vec![T::zero(); c * len];
                let mut gg = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for ch in 0..c {
                    let r = ch * len..(ch + 1) * len;
                    let (gr, hr) = (&g[r.clone()], &xhat[r.clone()]);
                    let sum_g: T = gr.iter().copied().sum();
                    let sum_gh: T = gr.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                    gbeta[ch] = sum_g;
                    gg[ch] = sum_gh;
                    let k = gd[ch] * inv_std[ch] / n;
                    for t in 0..len {
                        gx[ch * len + t] = k * (n * gr[t] - sum_g - hr[t] * sum_gh);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gbeta)]
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gamma).data();
                let (c, len) = (y.shape()[0], y.shape()[1]);
                let mut gx = vec![T::zero(); c * len];
                let mut gg = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for ch in 0..c {
                    for t in 0..len {
                        let k = ch * len + t;
                        gx[k] = g[k] * gd[ch] * inv_std[ch];
                        gg[ch] += g[k] * xhat[k];
                        gbeta[ch] += g[k];
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gbeta)]
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let gx = g
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                vec![(*x, gx)]
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| g[at(k)] * yd[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = yd[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let total: T = (0..len).map(|k| g[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = g[at(k)] - yd[at(k)].exp() * total;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::MaxPool1d { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (k, arg) in argmax.iter().enumerate() {
                    if let Some(src) = arg {
                        gx[*src] += g[k];
                    }
                }
                vec![(*x, gx)]
            }
            Op::ReduceMean { x, axis } => {
                let xv = self.value(*x);
                let (outer, len, inner) = axis_split(xv.shape(), *axis);
                let n = T::from_usize_lossy(len);
                let mut gx = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            gx[(o * len + k) * inner + i] = g[o * inner + i] / n;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::ReduceMax { x, argmax, .. } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (k, &src) in argmax.iter().enumerate() {
                    gx[src] += g[k];
                }
                vec![(*x, gx)]
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(y.shape(), *axis);
                let mut offset = 0;
                let mut res = Vec::with_capacity(xs.len());
                for &x in xs {
                    let len = self.value(x).shape()[*axis];
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        gx.extend_from_slice(&g[from..from + len * inner]);
                    }
                    offset += len;
                    res.push((x, gx));
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, full, inner) = axis_split(xv.shape(), *axis);
                let len = y.shape()[*axis];
                let mut gx = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    let from = o * len * inner;
                    gx[to..to + len * inner].copy_from_slice(&g[from..from + len * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect())]
            }
            Op::AddBias { x, b } => {
                let c = y.shape()[0];
                let inner = y.numel() / c;
                let gb = (0..c)
                    .map(|ch| g[ch * inner..(ch + 1) * inner].iter().copied().sum())
                    .collect();
                vec![(*x, g.to_vec()), (*b, gb)]
            }
            Op::OuterAdd(u, v) => {
                let (c, m, n) = (y.shape()[0], y.shape()[1], y.shape()[2]);
                let mut gu = vec![T::zero(); c * m];
                let mut gv = vec![T::zero(); c * n];
                for ch in 0..c {
                    for i in 0..m {
                        let row = &g[(ch * m + i) * n..(ch * m + i + 1) * n];
                        gu[ch * m + i] = row.iter().copied().sum();
                        for (acc, &r) in gv[ch * n..(ch + 1) * n].iter_mut().zip(row) {
                            *acc += r;
                        }
                    }
                }
                vec![(*u, gu), (*v, gv)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(bd).map(|(&x, &y)| x * y).collect();
                let gb = g.iter().zip(ad).map(|(&x, &y)| x * y).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { x, factor } => vec![(*x, g.iter().map(|&v| v * *factor).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Pick { x, indices } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (k, &i) in indices.iter().enumerate() {
                    gx[i] += g[k];
                }
                vec![(*x, gx)]
            }
            Op::LnClamped { x, floor } => {
                let xd = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > *floor { gv / xv } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
        }
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Input => "input",
        OpKind::Param => "param",
        OpKind::Gather => "gather",
        OpKind::Matmul => "matmul",
        OpKind::Conv1d => "conv1d",
        OpKind::BatchNorm => "batchnorm",
        OpKind::ChannelAffine => "batchnorm_eval",
        OpKind::Relu => "relu",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Softmax => "softmax",
        OpKind::LogSoftmax => "log_softmax",
        OpKind::MaxPool1d => "maxpool1d",
        OpKind::ReduceMean => "reduce_mean",
        OpKind::ReduceMax => "reduce_max",
        OpKind::Concat => "concat",
        OpKind::Slice => "slice",
        OpKind::Reshape => "reshape",
        OpKind::Dropout => "dropout",
        OpKind::AddBias => "add_bias",
        OpKind::OuterAdd => "outer_add",
        OpKind::Add => "add",
        OpKind::Mul => "mul",
        OpKind::Scale => "scale",
        OpKind::Sum => "sum",
        OpKind::Pick => "pick",
        OpKind::LnClamped => "ln_clamped",
    }
}

impl OpKind {
    pub const ALL: [OpKind; 26] = [
        OpKind::Input,
        OpKind::Param,
        OpKind::Gather,
        OpKind::Matmul,
        OpKind::Conv1d,
        OpKind::BatchNorm,
        OpKind::ChannelAffine,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::LogSoftmax,
        OpKind::MaxPool1d,
        OpKind::ReduceMean,
        OpKind::ReduceMax,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Reshape,
        OpKind::Dropout,
        OpKind::AddBias,
        OpKind::OuterAdd,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::Pick,
        OpKind::LnClamped,
    ];

    pub fn name(self) -> &'static str {
        kind_name(self)
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for kk in 0..k {
            let a_ik = a[i * k + kk];
            if a_ik == T::zero() {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += a_ik * bv;
            }
        }
    }
    out
}

fn softmax_along<T: Scalar>(data: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len)
                .map(|k| data[at(k)])
                .fold(T::neg_infinity(), T::max);
            let total: T = (0..len).map(|k| (data[at(k)] - max).exp()).sum();
            let log_total = total.ln();
            for k in 0..len {
                let shifted = data[at(k)] - max;
                out[at(k)] = if log {
                    shifted - log_total
                } else {
                    shifted.exp() / total
                };
            }
        }
    }
    out
}

/// Numerically stabilized softmax of a plain slice.
pub fn softmax_slice<T: Scalar>(xs: &[T]) -> Vec<T> {
    softmax_along(xs, &[xs.len()], 0, false)
}

/// Logistic function, stable for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    stable_sigmoid(x)
}
