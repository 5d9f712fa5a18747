//! Raw kernels used by the tape. Nothing here records gradients.

use super::{numel, strides, Real};
use crate::error::{dim_err, Result};

/// How an input of a broadcasting op maps onto the output's flat index.
#[derive(Debug, Clone)]
pub(crate) enum Bcast {
    Same,
    /// Input shape is a suffix of the output shape.
    Suffix(usize),
    Map(Vec<usize>),
}

impl Bcast {
    #[inline]
    pub fn idx(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(n) => i % n,
            Bcast::Map(m) => m[i],
        }
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(dim_err!("shapes {:?} and {:?} do not broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Builds the index plan for reading `input` while iterating over `out`.
pub(crate) fn bcast_plan(input: &[usize], out: &[usize]) -> Bcast {
    if input == out {
        return Bcast::Same;
    }
    let n_in = numel(input);
    if input.len() <= out.len() && out[out.len() - input.len()..] == *input {
        return Bcast::Suffix(n_in);
    }
    let rank = out.len();
    let mut padded = vec![1; rank - input.len()];
    padded.extend_from_slice(input);
    let in_strides = strides(&padded);
    let eff: Vec<usize> = (0..rank).map(|d| if padded[d] == 1 { 0 } else { in_strides[d] }).collect();
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    Bcast::Map(map)
}

/// c[m,n] += a[m,k] · b[k,n]
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xs = &x[c * 8..c * 8 + 8];
        let ys = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..x.len() {
        s += x[i] * y[i];
    }
    for a in acc {
        s += a;
    }
    s
}

/// da[m,k] += dc[m,n] · b[k,n]ᵀ
pub(crate) fn gemm_nt_acc<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// db[k,n] += a[m,k]ᵀ · dc[m,n]
pub(crate) fn gemm_tn_acc<T: Real>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(drow) {
                *d += av * g;
            }
        }
    }
}

/// Batch layout of a matmul after broadcasting the leading extents.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// (offset into a, offset into b) for every output batch entry.
    pub pairs: Vec<(usize, usize)>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<(MatmulPlan, Vec<usize>)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(dim_err!("matmul needs rank >= 2 operands, got {:?} and {:?}", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(dim_err!("matmul inner extents differ: {:?} · {:?}", a, b));
    }
    let ab = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shape(ab, bb).map_err(|_| dim_err!("matmul batch extents of {:?} and {:?} do not broadcast", a, b))?;
    let nb = numel(&batch);
    let pa = bcast_plan(ab, &batch);
    let pb = bcast_plan(bb, &batch);
    let pairs = (0..nb)
        .map(|i| {
            let ia = if ab.is_empty() { 0 } else { pa.idx(i) };
            let ib = if bb.is_empty() { 0 } else { pb.idx(i) };
            (ia * m * k, ib * k * n)
        })
        .collect();
    let mut out = batch;
    out.push(m);
    out.push(n);
    Ok((MatmulPlan { m, k, n, pairs }, out))
}

pub(crate) fn matmul_forward<T: Real>(plan: &MatmulPlan, a: &[T], b: &[T]) -> Vec<T> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![T::zero(); plan.pairs.len() * m * n];
    for (bi, &(oa, ob)) in plan.pairs.iter().enumerate() {
        gemm_acc(&a[oa..oa + m * k], &b[ob..ob + k * n], &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
    }
    out
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Real>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[base + j * inner]);
            }
            let mut s = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - mx).exp();
                y[base + j * inner] = e;
                s += e;
            }
            let inv = T::one() / s;
            for j in 0..len {
                y[base + j * inner] = y[base + j * inner] * inv;
            }
        }
    }
    y
}

pub(crate) fn log_softmax_forward<T: Real>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[base + j * inner]);
            }
            let mut s = T::zero();
            for j in 0..len {
                s += (x[base + j * inner] - mx).exp();
            }
            let lse = mx + s.ln();
            for j in 0..len {
                y[base + j * inner] = x[base + j * inner] - lse;
            }
        }
    }
    y
}

/// For every output flat index of the permuted tensor, the source flat index.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(shape);
    let rank = shape.len();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    (map, out_shape)
}

pub(crate) fn validate_perm(rank: usize, perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(dim_err!("permutation {:?} does not match rank {}", perm, rank));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(dim_err!("invalid permutation {:?}", perm));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Standard normal CDF via erf.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * phi(x)
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi(x) + x * pdf
}
