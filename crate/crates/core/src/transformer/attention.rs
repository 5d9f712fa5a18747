//! Multi-head attention and its factorized forms.
//!
//! Every flavor projects queries, keys and values token-wise, optionally
//! rotates them, then regroups the token grid `[S, X, Y, Z, D]` into
//! independent sequences (one per line or plane of the grid) before the
//! scaled dot product. Outputs are scattered back to grid order.

use rand::Rng;

use super::{AttentionMatrix, Ctx, INIT_STD};
use crate::error::{contract_err, Result};
use crate::tensor::ops::permute_map;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Real, Var};
use crate::tokenizer::{RotaryTable, TokenSequence};

/// Query, key, value and output projections of one attention stage.
#[derive(Debug, Clone, Copy)]
pub struct MsaParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl MsaParams {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dim: usize, rng: &mut R) -> Self {
        let mut w = |n: &str| store.trunc_normal(format!("{prefix}.{n}.weight"), &[dim, dim], INIT_STD, rng);
        let (wq, wk, wv, wo) = (w("q"), w("k"), w("v"), w("out"));
        MsaParams {
            wq,
            wk,
            wv,
            wo,
            bq: store.zeros(format!("{prefix}.q.bias"), &[dim]),
            bk: store.zeros(format!("{prefix}.k.bias"), &[dim]),
            bv: store.zeros(format!("{prefix}.v.bias"), &[dim]),
            bo: store.zeros(format!("{prefix}.out.bias"), &[dim]),
        }
    }
}

/// Which tokens attend to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqLayout {
    /// Every token (class token included) in one sequence.
    Full,
    /// Lines along one grid axis: tokens sharing the other two coordinates.
    Axis(usize),
    /// Planes orthogonal to an axis: tokens sharing that one coordinate.
    Plane(usize),
}

/// Permutation of `[S, X, Y, Z, D]` that makes each sequence contiguous, and
/// the resulting sequence length.
pub fn stage_layout(layout: SeqLayout, grid: [usize; 3]) -> (Vec<usize>, usize) {
    match layout {
        SeqLayout::Full => (vec![0, 1, 2, 3, 4], grid.iter().product()),
        SeqLayout::Axis(0) => (vec![0, 2, 3, 1, 4], grid[0]),
        SeqLayout::Axis(1) => (vec![0, 1, 3, 2, 4], grid[1]),
        SeqLayout::Axis(_) => (vec![0, 1, 2, 3, 4], grid[2]),
        SeqLayout::Plane(0) => (vec![0, 1, 2, 3, 4], grid[1] * grid[2]),
        SeqLayout::Plane(1) => (vec![0, 2, 1, 3, 4], grid[0] * grid[2]),
        SeqLayout::Plane(_) => (vec![0, 3, 1, 2, 4], grid[0] * grid[1]),
    }
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Grid index of every (sequence, position) slot within one sample.
fn sequence_map(layout: SeqLayout, grid: [usize; 3]) -> Vec<usize> {
    let (perm, _) = stage_layout(layout, grid);
    let (map, _) = permute_map(&[1, grid[0], grid[1], grid[2], 1], &perm);
    map
}

fn to_sequences<T: Real>(g: &mut Graph<T>, x: Var, grid: [usize; 3], layout: SeqLayout) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (batch, d) = (s[0], s[2]);
    let (perm, len) = stage_layout(layout, grid);
    let n: usize = grid.iter().product();
    let x5 = g.reshape(x, &[batch, grid[0], grid[1], grid[2], d])?;
    let xp = g.permute(x5, &perm)?;
    g.reshape(xp, &[batch * (n / len), len, d])
}

fn from_sequences<T: Real>(g: &mut Graph<T>, y: Var, batch: usize, grid: [usize; 3], layout: SeqLayout) -> Result<Var> {
    let d = g.shape(y)[2];
    let (perm, _) = stage_layout(layout, grid);
    let permuted: Vec<usize> = perm.iter().map(|&p| [batch, grid[0], grid[1], grid[2], d][p]).collect();
    let y5 = g.reshape(y, &permuted)?;
    let yp = g.permute(y5, &inverse(&perm))?;
    g.reshape(yp, &[batch, grid.iter().product(), d])
}

/// Scaled dot-product attention over `heads` heads for `[S, n, D']` inputs.
/// Returns the concatenated head outputs `[S, n, D']` and the probabilities
/// `[S, heads, n, n]`.
pub fn attend_grouped<T: Real>(g: &mut Graph<T>, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let s = g.shape(q).to_vec();
    let (batch, n, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let split = |g: &mut Graph<T>, x: Var, perm: &[usize]| -> Result<Var> {
        let x = g.reshape(x, &[batch, n, heads, dh])?;
        g.permute(x, perm)
    };
    let qh = split(g, q, &[0, 2, 1, 3])?;
    let kt = split(g, k, &[0, 2, 3, 1])?;
    let vh = split(g, v, &[0, 2, 1, 3])?;
    let scores = g.matmul(qh, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let probs = g.softmax(scores, 3)?;
    let out = g.matmul(probs, vh)?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    let out = g.reshape(out, &[batch, n, d])?;
    Ok((out, probs))
}

/// Accumulates `weight ×` the head-mean of `probs` into full-token matrices.
fn record_probs<T: Real>(
    g: &Graph<T>,
    probs: Var,
    batch: usize,
    grid: [usize; 3],
    layout: SeqLayout,
    weight: f64,
    out: &mut [AttentionMatrix],
) {
    let shape = g.shape(probs);
    let (seqs, heads, len) = (shape[0], shape[1], shape[2]);
    let per_sample = seqs / batch;
    let p = g.value(probs).data();
    let full = layout == SeqLayout::Full;
    let map = if full { Vec::new() } else { sequence_map(layout, grid) };
    let w = weight / heads as f64;
    for sq in 0..seqs {
        let b = sq / per_sample;
        let local = sq % per_sample;
        let m = &mut out[b];
        for h in 0..heads {
            let base = (sq * heads + h) * len * len;
            for i in 0..len {
                let gi = if full { i } else { map[local * len + i] };
                for j in 0..len {
                    let gj = if full { j } else { map[local * len + j] };
                    m.data[gi * m.n + gj] += w * p[base + i * len + j].f64();
                }
            }
        }
    }
}

fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn rotate<T: Real>(g: &mut Graph<T>, x: Var, heads: usize, table: Option<&RotaryTable<T>>) -> Result<Var> {
    let Some(table) = table else { return Ok(x) };
    let s = g.shape(x).to_vec();
    let x4 = g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    let r = g.rotary(x4, table.cos.clone(), table.sin.clone())?;
    g.reshape(r, &s)
}

/// Attention head group running over `layout`, as part of a larger stage.
struct Group {
    layout: SeqLayout,
    heads: usize,
}

/// Shared machinery: projections, optional rotary, grouped attention with
/// per-group layouts, concatenation and the output projection.
#[allow(clippy::too_many_arguments)]
fn stage<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    p: &MsaParams,
    bound: &Bound,
    x: Var,
    seq: &TokenSequence,
    heads: usize,
    groups: &[Group],
    rotary: Option<&RotaryTable<T>>,
    records: Option<&mut Vec<AttentionMatrix>>,
) -> Result<Var> {
    let batch = g.shape(x)[0];
    let d = g.shape(x)[2];
    let q = linear(g, x, bound[p.wq], bound[p.bq])?;
    let k = linear(g, x, bound[p.wk], bound[p.bk])?;
    let v = linear(g, x, bound[p.wv], bound[p.bv])?;
    let q = rotate(g, q, heads, rotary)?;
    let k = rotate(g, k, heads, rotary)?;
    let n_t = seq.len();
    let mut mats = records.map(|r| {
        r.extend((0..batch).map(|_| AttentionMatrix::zeros(n_t)));
        let start = r.len() - batch;
        (r, start)
    });
    let dh = d / heads;
    let mut outs = Vec::with_capacity(groups.len());
    let mut head0 = 0;
    for grp in groups {
        let width = grp.heads * dh;
        let (gq, gk, gv) = if groups.len() == 1 {
            (q, k, v)
        } else {
            (g.narrow(q, 2, head0 * dh, width)?, g.narrow(k, 2, head0 * dh, width)?, g.narrow(v, 2, head0 * dh, width)?)
        };
        head0 += grp.heads;
        let out = if grp.layout == SeqLayout::Full {
            let (o, probs) = attend_grouped(g, gq, gk, gv, grp.heads)?;
            if ctx.record {
                if let Some((r, start)) = mats.as_mut() {
                    record_probs(g, probs, batch, seq.grid, grp.layout, grp.heads as f64 / heads as f64, &mut r[*start..]);
                }
            }
            o
        } else {
            let sq = to_sequences(g, gq, seq.grid, grp.layout)?;
            let sk = to_sequences(g, gk, seq.grid, grp.layout)?;
            let sv = to_sequences(g, gv, seq.grid, grp.layout)?;
            let (o, probs) = attend_grouped(g, sq, sk, sv, grp.heads)?;
            if ctx.record {
                if let Some((r, start)) = mats.as_mut() {
                    record_probs(g, probs, batch, seq.grid, grp.layout, grp.heads as f64 / heads as f64, &mut r[*start..]);
                }
            }
            from_sequences(g, o, batch, seq.grid, grp.layout)?
        };
        outs.push(out);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 2)? };
    linear(g, cat, bound[p.wo], bound[p.bo])
}

fn require_grid(seq: &TokenSequence) -> Result<()> {
    if seq.has_class_token {
        return Err(contract_err!("factorized attention needs a pure grid sequence without class token"));
    }
    Ok(())
}

/// Per-sample attention matrices of one call, `[stage][sample]`.
pub type StageRecords = Vec<Vec<AttentionMatrix>>;

fn new_records(ctx: &Ctx, stages: usize) -> Option<StageRecords> {
    ctx.record.then(|| vec![Vec::new(); stages])
}

/// Vanilla multi-head self-attention over all tokens of `seq`.
pub fn msa<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    p: &MsaParams,
    bound: &Bound,
    seq: TokenSequence,
    heads: usize,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<StageRecords>)> {
    let mut rec = new_records(ctx, 1);
    let groups = [Group { layout: SeqLayout::Full, heads }];
    let out = stage(g, ctx, p, bound, seq.tokens, &seq, heads, &groups, rotary, rec.as_mut().map(|r| &mut r[0]))?;
    Ok((TokenSequence { tokens: out, ..seq }, rec))
}

/// Three sequential stages along x, y then z, each with its own parameters.
pub fn axile_msa<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    stages: &[MsaParams; 3],
    bound: &Bound,
    seq: TokenSequence,
    heads: usize,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<StageRecords>)> {
    require_grid(&seq)?;
    let mut rec = new_records(ctx, 3);
    let mut x = seq.tokens;
    for (axis, p) in stages.iter().enumerate() {
        let groups = [Group { layout: SeqLayout::Axis(axis), heads }];
        x = stage(g, ctx, p, bound, x, &seq, heads, &groups, rotary, rec.as_mut().map(|r| &mut r[axis]))?;
    }
    Ok((TokenSequence { tokens: x, ..seq }, rec))
}

/// One stage whose heads are split in three groups, group `k` attending
/// along axis `k` only.
pub fn dp_factorized_msa<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    p: &MsaParams,
    bound: &Bound,
    seq: TokenSequence,
    heads: usize,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<StageRecords>)> {
    require_grid(&seq)?;
    if heads % 3 != 0 {
        return Err(crate::Error::Config(format!("dot-product factorization needs heads divisible by 3, got {heads}")));
    }
    let mut rec = new_records(ctx, 1);
    let groups: Vec<Group> = (0..3).map(|a| Group { layout: SeqLayout::Axis(a), heads: heads / 3 }).collect();
    let out = stage(g, ctx, p, bound, seq.tokens, &seq, heads, &groups, rotary, rec.as_mut().map(|r| &mut r[0]))?;
    Ok((TokenSequence { tokens: out, ..seq }, rec))
}

/// Parameters of a plane/axis block: two sequential stages, or one stage
/// with split heads.
#[derive(Debug, Clone, Copy)]
pub enum PlaneAxisParams {
    Sequential { plane: MsaParams, axis: MsaParams },
    Split(MsaParams),
}

/// Attention within planes orthogonal to `orth_axis`, then along it.
pub fn plane_axis_msa<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    params: &PlaneAxisParams,
    bound: &Bound,
    seq: TokenSequence,
    orth_axis: usize,
    heads: usize,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<StageRecords>)> {
    require_grid(&seq)?;
    match params {
        PlaneAxisParams::Sequential { plane, axis } => {
            let mut rec = new_records(ctx, 2);
            let gp = [Group { layout: SeqLayout::Plane(orth_axis), heads }];
            let x = stage(g, ctx, plane, bound, seq.tokens, &seq, heads, &gp, rotary, rec.as_mut().map(|r| &mut r[0]))?;
            let ga = [Group { layout: SeqLayout::Axis(orth_axis), heads }];
            let x = stage(g, ctx, axis, bound, x, &seq, heads, &ga, rotary, rec.as_mut().map(|r| &mut r[1]))?;
            Ok((TokenSequence { tokens: x, ..seq }, rec))
        }
        PlaneAxisParams::Split(p) => {
            if heads % 2 != 0 {
                return Err(crate::Error::Config(format!("plane/axis head split needs an even head count, got {heads}")));
            }
            let mut rec = new_records(ctx, 1);
            let groups = [
                Group { layout: SeqLayout::Plane(orth_axis), heads: heads / 2 },
                Group { layout: SeqLayout::Axis(orth_axis), heads: heads / 2 },
            ];
            let x = stage(g, ctx, p, bound, seq.tokens, &seq, heads, &groups, rotary, rec.as_mut().map(|r| &mut r[0]))?;
            Ok((TokenSequence { tokens: x, ..seq }, rec))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_maps_cover_grid() {
        let grid = [2, 3, 2];
        for layout in [SeqLayout::Axis(0), SeqLayout::Axis(1), SeqLayout::Axis(2), SeqLayout::Plane(0), SeqLayout::Plane(1), SeqLayout::Plane(2)] {
            let mut m = sequence_map(layout, grid);
            m.sort();
            assert_eq!(m, (0..12).collect::<Vec<_>>(), "{layout:?}");
        }
    }

    #[test]
    fn axis_sequences_vary_one_coordinate() {
        let grid = [2, 3, 2];
        let (_, len) = stage_layout(SeqLayout::Axis(1), grid);
        let map = sequence_map(SeqLayout::Axis(1), grid);
        for s in map.chunks(len) {
            let c: Vec<_> = s.iter().map(|&i| crate::tokenizer::grid_coord(grid, i)).collect();
            assert!(c.iter().all(|v| v[0] == c[0][0] && v[2] == c[0][2]));
            assert_eq!(c.iter().map(|v| v[1]).collect::<Vec<_>>(), vec![0, 1, 2]);
        }
    }
}
