//! Wengert-list autodiff: every op appends a node, `backward` walks them in
//! reverse and accumulates adjoints.

use rand::Rng;

use super::ops::{self, Bcast, MatmulPlan};
use super::{numel, Real, Tensor};
use crate::error::{config_err, contract_err, dim_err, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var, Bcast, Bcast),
    Sub(Var, Var, Bcast, Bcast),
    Mul(Var, Var, Bcast, Bcast),
    Scale(Var, T),
    MatMul(Var, Var, MatmulPlan),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Dropout(Var, Vec<T>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    BroadcastTo(Var, Bcast),
    Sum(Var),
    MeanAxis(Var, usize),
    Rotary { x: Var, cos: Vec<T>, sin: Vec<T>, heads: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One graph per forward pass; not shared across threads.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    visits: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false, visits: 0 }
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

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Number of nodes visited by the last `backward` call.
    pub fn backward_visits(&self) -> usize {
        self.visits
    }

    fn binary(&mut self, a: Var, b: Var, kind: u8) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = ops::broadcast_shape(&sa, &sb)?;
        let pa = ops::bcast_plan(&sa, &out);
        let pb = ops::bcast_plan(&sb, &out);
        let n = numel(&out);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match (kind, &pa, &pb) {
            (0, Bcast::Same, Bcast::Same) => da.iter().zip(db).map(|(&x, &y)| x + y).collect(),
            (0, _, _) => (0..n).map(|i| da[pa.idx(i)] + db[pb.idx(i)]).collect(),
            (1, _, _) => (0..n).map(|i| da[pa.idx(i)] - db[pb.idx(i)]).collect(),
            _ => (0..n).map(|i| da[pa.idx(i)] * db[pb.idx(i)]).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        let op = match kind {
            0 => Op::Add(a, b, pa, pb),
            1 => Op::Sub(a, b, pa, pb),
            _ => Op::Mul(a, b, pa, pb),
        };
        Ok(self.push(Tensor::new(&out, data)?, op, rg))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * c).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Batched matrix product `[..., m, k] · [..., k, n]` with broadcast batch extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (plan, out) = ops::matmul_plan(self.shape(a), self.shape(b))?;
        let data = ops::matmul_forward(&plan, self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&out, data)?, Op::MatMul(a, b, plan), rg))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(dim_err!("axis {} out of range for shape {:?}", axis, self.shape(x)));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let t = self.value(x);
        let data = ops::softmax_forward(t.data(), t.shape(), axis);
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x, axis), rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let t = self.value(x);
        let data = ops::log_softmax_forward(t.data(), t.shape(), axis);
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x, axis), rg))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(dim_err!(
                "layer norm over {} features got gain {:?} and bias {:?}",
                d,
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let rows = numel(&shape) / d;
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        let inv_d = T::of(1.0 / d as f64);
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::of(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new(&shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| T::of(ops::gelu_scalar(v.f64()))).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(config_err!("dropout probability must lie in [0, 1), got {}", p));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let t = self.value(x);
        let mask: Vec<T> = (0..t.len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor { shape: t.shape().to_vec(), data };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout(x, mask), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(x), shape));
        }
        let value = Tensor { shape: shape.to_vec(), data: self.value(x).data().to_vec() };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        ops::validate_perm(self.shape(x).len(), perm)?;
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(x);
        }
        let (map, out) = ops::permute_map(self.shape(x), perm);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape: out, data }, Op::Permute(x, perm.to_vec()), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {} out of range for {:?}", axis, first));
        }
        let mut out = first.clone();
        out[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || (0..s.len()).any(|d| d != axis && s[d] != first[d]) {
                return Err(dim_err!("concat along {} of {:?} and {:?}", axis, first, s));
            }
            out[axis] += s[axis];
        }
        let (outer, _, inner) = ops::split_axis(&out, axis);
        let mut data = Vec::with_capacity(numel(&out));
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(&out, data)?, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(dim_err!("narrow({}, {}, {}) out of range for {:?}", axis, start, len, shape));
        }
        let (outer, full, inner) = ops::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&out, data)?, Op::Narrow { x, axis, start }, rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let out = ops::broadcast_shape(&s, shape)?;
        if out != shape {
            return Err(dim_err!("cannot broadcast {:?} to {:?}", s, shape));
        }
        let plan = ops::bcast_plan(&s, shape);
        let src = self.value(x).data();
        let data = (0..numel(shape)).map(|i| src[plan.idx(i)]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::BroadcastTo(x, plan), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = ops::split_axis(&shape, axis);
        let src = self.value(x).data();
        let inv = T::of(1.0 / len as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        data.iter_mut().for_each(|d| *d = *d * inv);
        let mut out: Vec<usize> = shape.clone();
        out.remove(axis);
        if out.is_empty() {
            out.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&out, data)?, Op::MeanAxis(x, axis), rg))
    }

    /// Rotates adjacent pairs of the last axis of `x: [S, n, heads, dh]` by
    /// per-token angles given as `cos`/`sin` tables of shape `[n, dh/2]`.
    pub fn rotary(&mut self, x: Var, cos: Vec<T>, sin: Vec<T>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || shape[3] % 2 != 0 {
            return Err(dim_err!("rotary expects [S, n, heads, even dh], got {:?}", shape));
        }
        let (s, n, heads, dh) = (shape[0], shape[1], shape[2], shape[3]);
        let half = dh / 2;
        if cos.len() != n * half || sin.len() != n * half {
            return Err(dim_err!("rotary table has {} entries, expected {}", cos.len(), n * half));
        }
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for si in 0..s {
            for t in 0..n {
                for h in 0..heads {
                    let base = ((si * n + t) * heads + h) * dh;
                    for j in 0..half {
                        let (c, sn) = (cos[t * half + j], sin[t * half + j]);
                        let (a, b) = (src[base + 2 * j], src[base + 2 * j + 1]);
                        data[base + 2 * j] = a * c - b * sn;
                        data[base + 2 * j + 1] = a * sn + b * c;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Rotary { x, cos, sin, heads }, rg))
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
        self.visits = 0;
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract_err!("backward already ran on this graph; call reset_grads first"));
        }
        if self.value(loss).len() != 1 {
            return Err(contract_err!("loss must be a scalar, got shape {:?}", self.shape(loss)));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        self.visits = 0;
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                self.grads[i] = Some(gout);
                continue;
            }
            self.visits += 1;
            self.backprop_node(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.rg(v) {
            return;
        }
        let mut buf = self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(&mut buf, self);
        self.grads[v.0] = Some(buf);
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        // Temporarily take the op so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b, pa, pb) | Op::Sub(a, b, pa, pb) => {
                let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                self.acc(*a, |buf, _| scatter(buf, g, pa, T::one()));
                self.acc(*b, |buf, _| scatter(buf, g, pb, sign));
            }
            Op::Mul(a, b, pa, pb) => {
                self.acc(*a, |buf, s| {
                    let bv = s.value(*b).data();
                    for (k, &gk) in g.iter().enumerate() {
                        buf[pa.idx(k)] += gk * bv[pb.idx(k)];
                    }
                });
                self.acc(*b, |buf, s| {
                    let av = s.value(*a).data();
                    for (k, &gk) in g.iter().enumerate() {
                        buf[pb.idx(k)] += gk * av[pa.idx(k)];
                    }
                });
            }
            Op::Scale(a, c) => {
                self.acc(*a, |buf, _| {
                    for (d, &gk) in buf.iter_mut().zip(g) {
                        *d += gk * *c;
                    }
                });
            }
            Op::MatMul(a, b, plan) => {
                let (m, k, n) = (plan.m, plan.k, plan.n);
                self.acc(*a, |buf, s| {
                    let bv = s.value(*b).data();
                    for (bi, &(oa, ob)) in plan.pairs.iter().enumerate() {
                        ops::gemm_nt_acc(&g[bi * m * n..(bi + 1) * m * n], &bv[ob..ob + k * n], &mut buf[oa..oa + m * k], m, k, n);
                    }
                });
                self.acc(*b, |buf, s| {
                    let av = s.value(*a).data();
                    for (bi, &(oa, ob)) in plan.pairs.iter().enumerate() {
                        ops::gemm_tn_acc(&av[oa..oa + m * k], &g[bi * m * n..(bi + 1) * m * n], &mut buf[ob..ob + k * n], m, k, n);
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let shape = self.nodes[i].value.shape().to_vec();
                let (outer, len, inner) = ops::split_axis(&shape, *axis);
                self.acc(*x, |buf, s| {
                    let y = s.nodes[i].value.data();
                    for o in 0..outer {
                        for q in 0..inner {
                            let base = o * len * inner + q;
                            let mut dotp = T::zero();
                            for j in 0..len {
                                dotp += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                buf[idx] += y[idx] * (g[idx] - dotp);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(x, axis) => {
                let shape = self.nodes[i].value.shape().to_vec();
                let (outer, len, inner) = ops::split_axis(&shape, *axis);
                self.acc(*x, |buf, s| {
                    let y = s.nodes[i].value.data();
                    for o in 0..outer {
                        for q in 0..inner {
                            let base = o * len * inner + q;
                            let mut gs = T::zero();
                            for j in 0..len {
                                gs += g[base + j * inner];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                buf[idx] += g[idx] - y[idx].exp() * gs;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).len();
                let rows = rstd.len();
                self.acc(*gain, |buf, _| {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.acc(*bias, |buf, _| {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += g[r * d + j];
                        }
                    }
                });
                self.acc(*x, |buf, s| {
                    let gv = s.value(*gain).data();
                    let inv_d = T::of(1.0 / d as f64);
                    let mut dh = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            dh[j] = g[r * d + j] * gv[j];
                            m1 += dh[j];
                            m2 += dh[j] * xhat[r * d + j];
                        }
                        m1 = m1 * inv_d;
                        m2 = m2 * inv_d;
                        for j in 0..d {
                            buf[r * d + j] += rstd[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                self.acc(*x, |buf, s| {
                    let xv = s.value(*x).data();
                    for k in 0..g.len() {
                        buf[k] += g[k] * T::of(ops::gelu_grad_scalar(xv[k].f64()));
                    }
                });
            }
            Op::Dropout(x, mask) => {
                self.acc(*x, |buf, _| {
                    for k in 0..g.len() {
                        buf[k] += g[k] * mask[k];
                    }
                });
            }
            Op::Reshape(x) => {
                self.acc(*x, |buf, _| {
                    for (d, &gk) in buf.iter_mut().zip(g) {
                        *d += gk;
                    }
                });
            }
            Op::Permute(x, perm) => {
                self.acc(*x, |buf, s| {
                    let (map, _) = ops::permute_map(s.shape(*x), perm);
                    for (k, &src) in map.iter().enumerate() {
                        buf[src] += g[k];
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let out = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = ops::split_axis(&out, *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    self.acc(v, |buf, _| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * len * inner;
                            for q in 0..len * inner {
                                buf[dst + q] += g[src + q];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let out = self.nodes[i].value.shape().to_vec();
                let full = self.shape(*x)[*axis];
                let (outer, len, inner) = ops::split_axis(&out, *axis);
                self.acc(*x, |buf, _| {
                    for o in 0..outer {
                        let dst = o * full * inner + start * inner;
                        for q in 0..len * inner {
                            buf[dst + q] += g[o * len * inner + q];
                        }
                    }
                });
            }
            Op::BroadcastTo(x, plan) => {
                self.acc(*x, |buf, _| scatter(buf, g, plan, T::one()));
            }
            Op::Sum(x) => {
                self.acc(*x, |buf, _| buf.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::MeanAxis(x, axis) => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = ops::split_axis(&shape, *axis);
                let inv = T::of(1.0 / len as f64);
                self.acc(*x, |buf, _| {
                    for o in 0..outer {
                        for j in 0..len {
                            for q in 0..inner {
                                buf[(o * len + j) * inner + q] += g[o * inner + q] * inv;
                            }
                        }
                    }
                });
            }
            Op::Rotary { x, cos, sin, heads } => {
                let shape = self.shape(*x).to_vec();
                let (s, n, dh) = (shape[0], shape[1], shape[3]);
                let half = dh / 2;
                self.acc(*x, |buf, _| {
                    for si in 0..s {
                        for t in 0..n {
                            for h in 0..*heads {
                                let base = ((si * n + t) * heads + h) * dh;
                                for j in 0..half {
                                    let (c, sn) = (cos[t * half + j], sin[t * half + j]);
                                    let (ga, gb) = (g[base + 2 * j], g[base + 2 * j + 1]);
                                    buf[base + 2 * j] += ga * c + gb * sn;
                                    buf[base + 2 * j + 1] += -ga * sn + gb * c;
                                }
                            }
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn scatter<T: Real>(buf: &mut [T], g: &[T], plan: &Bcast, sign: T) {
    match plan {
        Bcast::Same => {
            for (d, &gk) in buf.iter_mut().zip(g) {
                *d += sign * gk;
            }
        }
        _ => {
            for (k, &gk) in g.iter().enumerate() {
                buf[plan.idx(k)] += sign * gk;
            }
        }
    }
}
