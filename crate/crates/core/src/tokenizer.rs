//! Volumes to token sequences.
//!
//! Blocks are cut on a regular grid and ordered lexicographically by grid
//! index (x slowest, z fastest); voxels inside a block are flattened the same
//! way. Sequences live on the tape as `[batch, tokens, D]`, where `batch` is 1
//! for whole-volume models and the block count for multiple-instance models.

use crate::error::{config_err, contract_err, dim_err, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Dense 3D scalar grid, stored x-major (x slowest, z fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
    pub label: Option<usize>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>, label: Option<usize>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(dim_err!("volume extents must be positive, got {:?}", dims));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(dim_err!("volume {:?} needs {} voxels, got {}", dims, dims.iter().product::<usize>(), data.len()));
        }
        Ok(Volume { dims, data, label })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Volume { dims, data: vec![0.0; dims.iter().product()], label: None }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume { dims, data, label: None }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Min-max rescale into [0, 1]; constant volumes map to zeros.
    pub fn normalized(mut self) -> Self {
        let (lo, hi) = self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
        self
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Grid extents to lexicographic position.
#[inline]
pub fn grid_coord(grid: [usize; 3], i: usize) -> [usize; 3] {
    [i / (grid[1] * grid[2]), (i / grid[2]) % grid[1], i % grid[2]]
}

#[inline]
pub fn grid_index(grid: [usize; 3], c: [usize; 3]) -> usize {
    (c[0] * grid[1] + c[1]) * grid[2] + c[2]
}

/// Edge lengths of the cubic tokens cut from a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub block_edge: usize,
    /// Patch edge inside each block; multiple-instance variants only.
    pub patch_edge: Option<usize>,
    pub embed_dim: usize,
}

impl TokenizerConfig {
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        check_divides(dims, self.block_edge)?;
        if let Some(p) = self.patch_edge {
            if p == 0 || self.block_edge % p != 0 {
                return Err(config_err!("patch edge {} does not divide block edge {}", p, self.block_edge));
            }
        }
        Ok(())
    }

    pub fn block_grid(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|d| d / self.block_edge)
    }

    /// n = LWH / B³.
    pub fn block_count(&self, dims: [usize; 3]) -> usize {
        dims.iter().product::<usize>() / self.block_edge.pow(3)
    }

    pub fn patches_per_block(&self) -> Option<usize> {
        self.patch_edge.map(|p| (self.block_edge / p).pow(3))
    }
}

fn check_divides(dims: [usize; 3], edge: usize) -> Result<()> {
    const AXES: [&str; 3] = ["x (L)", "y (W)", "z (H)"];
    if edge == 0 {
        return Err(config_err!("block edge must be positive"));
    }
    for (axis, &d) in dims.iter().enumerate() {
        if d % edge != 0 {
            return Err(config_err!("block edge {} does not divide extent {} along axis {}", edge, d, AXES[axis]));
        }
    }
    Ok(())
}

/// Flattened non-overlapping cubes, `count × edge³`, in lexicographic grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub grid: [usize; 3],
    pub edge: usize,
    pub data: Vec<f32>,
}

impl Blocks {
    pub fn count(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn block_len(&self) -> usize {
        self.edge.pow(3)
    }

    pub fn block(&self, i: usize) -> &[f32] {
        let n = self.block_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn coord(&self, i: usize) -> [usize; 3] {
        grid_coord(self.grid, i)
    }
}

pub fn extract_blocks(v: &Volume, edge: usize) -> Result<Blocks> {
    let dims = v.dims();
    check_divides(dims, edge)?;
    let grid = dims.map(|d| d / edge);
    let n = grid.iter().product::<usize>();
    let mut data = Vec::with_capacity(n * edge.pow(3));
    for bi in 0..n {
        let [bx, by, bz] = grid_coord(grid, bi);
        for x in 0..edge {
            for y in 0..edge {
                let row = v.index(bx * edge + x, by * edge + y, bz * edge);
                data.extend_from_slice(&v.data()[row..row + edge]);
            }
        }
    }
    Ok(Blocks { grid, edge, data })
}

/// Inverse of [`extract_blocks`].
pub fn assemble_blocks(blocks: &Blocks) -> Volume {
    let e = blocks.edge;
    let dims = blocks.grid.map(|g| g * e);
    let mut v = Volume::zeros(dims);
    for bi in 0..blocks.count() {
        let [bx, by, bz] = blocks.coord(bi);
        let b = blocks.block(bi);
        for x in 0..e {
            for y in 0..e {
                let row = v.index(bx * e + x, by * e + y, bz * e);
                v.data_mut()[row..row + e].copy_from_slice(&b[(x * e + y) * e..(x * e + y + 1) * e]);
            }
        }
    }
    v
}

/// Two-level split: blocks of `block_edge`, each cut into patches of
/// `patch_edge`. Returns `[n_blocks][n_patches × patch_edge³]`.
pub fn extract_block_patches(v: &Volume, block_edge: usize, patch_edge: usize) -> Result<(Blocks, Vec<Blocks>)> {
    let blocks = extract_blocks(v, block_edge)?;
    if patch_edge == 0 || block_edge % patch_edge != 0 {
        return Err(config_err!("patch edge {} does not divide block edge {}", patch_edge, block_edge));
    }
    let per_block = (0..blocks.count())
        .map(|i| {
            let bv = Volume { dims: [block_edge; 3], data: blocks.block(i).to_vec(), label: None };
            extract_blocks(&bv, patch_edge)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((blocks, per_block))
}

/// Token matrix on the tape plus the grid geometry of its content tokens.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence {
    /// `[batch, n_tokens, D]`
    pub tokens: Var,
    pub grid: [usize; 3],
    pub has_class_token: bool,
}

impl TokenSequence {
    pub fn content_len(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn len(&self) -> usize {
        self.content_len() + usize::from(self.has_class_token)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid coordinate of token `t`; `None` for the class token.
    pub fn coord(&self, t: usize) -> Option<[usize; 3]> {
        match (self.has_class_token, t) {
            (true, 0) => None,
            (true, t) => Some(grid_coord(self.grid, t - 1)),
            (false, t) => Some(grid_coord(self.grid, t)),
        }
    }

    pub fn coords(&self) -> Vec<Option<[usize; 3]>> {
        (0..self.len()).map(|t| self.coord(t)).collect()
    }
}

/// Puts `[batch, n, P³]` flattened cubes on the tape as a constant.
pub fn blocks_input<T: Real>(g: &mut Graph<T>, batches: &[&Blocks]) -> Result<Var> {
    let first = batches[0];
    let mut data = Vec::with_capacity(batches.len() * first.data.len());
    for b in batches {
        if b.grid != first.grid || b.edge != first.edge {
            return Err(dim_err!("inconsistent block grids {:?} and {:?}", first.grid, b.grid));
        }
        data.extend(b.data.iter().map(|&v| T::of(v as f64)));
    }
    let t = Tensor::new(&[batches.len(), first.count(), first.block_len()], data)?;
    Ok(g.constant(t))
}

/// tokens = blocks · W + b
pub fn linear_embed<T: Real>(g: &mut Graph<T>, blocks: Var, grid: [usize; 3], w: Var, b: Var) -> Result<TokenSequence> {
    let bs = g.shape(blocks).to_vec();
    let ws = g.shape(w).to_vec();
    if bs.len() != 3 || ws.len() != 2 || ws[0] != bs[2] || bs[1] != grid.iter().product::<usize>() {
        return Err(dim_err!("embedding of blocks {:?} with weights {:?}", bs, ws));
    }
    let xw = g.matmul(blocks, w)?;
    let tokens = g.add(xw, b)?;
    Ok(TokenSequence { tokens, grid, has_class_token: false })
}

/// Adds `[batch?, n, D]`-broadcastable rows to content tokens, leaving a class
/// token (if any) untouched.
fn add_to_content<T: Real>(g: &mut Graph<T>, seq: TokenSequence, rows: Var) -> Result<TokenSequence> {
    let tokens = if seq.has_class_token {
        let shape = g.shape(seq.tokens).to_vec();
        let rs = g.shape(rows).to_vec();
        let mut pad_shape = rs.clone();
        let k = pad_shape.len() - 2;
        pad_shape[k] = 1;
        let pad = g.constant(Tensor::zeros(&pad_shape));
        let padded = g.concat(&[pad, rows], k)?;
        debug_assert!(shape.len() == 3);
        g.add(seq.tokens, padded)?
    } else {
        g.add(seq.tokens, rows)?
    };
    Ok(TokenSequence { tokens, ..seq })
}

pub fn add_positional<T: Real>(g: &mut Graph<T>, seq: TokenSequence, table: Var) -> Result<TokenSequence> {
    let ts = g.shape(table).to_vec();
    if ts.len() != 2 || ts[0] != seq.content_len() {
        return Err(config_err!(
            "positional table has {:?} rows, sequence has {} content tokens",
            ts.first(),
            seq.content_len()
        ));
    }
    add_to_content(g, seq, table)
}

pub fn prepend_class_token<T: Real>(g: &mut Graph<T>, seq: TokenSequence, cls: Var) -> Result<TokenSequence> {
    if seq.has_class_token {
        return Err(contract_err!("sequence already carries a class token"));
    }
    let shape = g.shape(seq.tokens).to_vec();
    let d = shape[2];
    if g.value(cls).len() != d {
        return Err(dim_err!("class token of length {} for model dim {}", g.value(cls).len(), d));
    }
    let c = g.reshape(cls, &[1, 1, d])?;
    let c = g.broadcast_to(c, &[shape[0], 1, d])?;
    let tokens = g.concat(&[c, seq.tokens], 1)?;
    Ok(TokenSequence { tokens, has_class_token: true, ..seq })
}

/// Adds table row `block_index` to every patch token of a single-block sequence.
pub fn add_block_embedding<T: Real>(
    g: &mut Graph<T>,
    seq: TokenSequence,
    block_index: [usize; 3],
    block_grid: [usize; 3],
    table: Var,
) -> Result<TokenSequence> {
    if (0..3).any(|k| block_index[k] >= block_grid[k]) {
        return Err(contract_err!("block index {:?} outside grid {:?}", block_index, block_grid));
    }
    let row = grid_index(block_grid, block_index);
    let d = g.shape(table)[1];
    let r = g.narrow(table, 0, row, 1)?;
    let r = g.reshape(r, &[1, 1, d])?;
    add_to_content(g, seq, r)
}

/// Batched form: sequence batch entry `b` receives table row `b`.
pub fn add_block_embeddings<T: Real>(g: &mut Graph<T>, seq: TokenSequence, table: Var) -> Result<TokenSequence> {
    let shape = g.shape(seq.tokens).to_vec();
    let ts = g.shape(table).to_vec();
    if ts.len() != 2 || ts[0] != shape[0] {
        return Err(contract_err!("block table {:?} for {} blocks", ts, shape[0]));
    }
    let r = g.reshape(table, &[ts[0], 1, ts[1]])?;
    add_to_content(g, seq, r)
}

/// Cos/sin tables for 3D rotary embedding, shape `[n_tokens, d_head/2]`.
///
/// The head dimension is split in three equal parts, one per axis; within
/// part `k` pair `j` turns by `base^(-2j/(d_head/3)) · coord[k]`. Tokens
/// without a coordinate (the class token) are left unrotated.
#[derive(Debug, Clone)]
pub struct RotaryTable<T> {
    pub cos: Vec<T>,
    pub sin: Vec<T>,
    pub d_head: usize,
}

impl<T: Real> RotaryTable<T> {
    pub const BASE: f64 = 10_000.0;

    pub fn new(coords: &[Option<[usize; 3]>], d_head: usize) -> Result<Self> {
        Self::with_offset(coords, d_head, [0.0; 3])
    }

    /// As [`RotaryTable::new`] with every coordinate shifted by `offset`.
    pub fn with_offset(coords: &[Option<[usize; 3]>], d_head: usize, offset: [f64; 3]) -> Result<Self> {
        if d_head == 0 || d_head % 6 != 0 {
            return Err(config_err!("rotary embedding needs a head dimension divisible by 6, got {}", d_head));
        }
        let third = d_head / 3;
        let pairs = third / 2;
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(coords.len() * half);
        let mut sin = Vec::with_capacity(coords.len() * half);
        for c in coords {
            for k in 0..3 {
                for j in 0..pairs {
                    let angle = match c {
                        Some(c) => {
                            let theta = Self::BASE.powf(-2.0 * j as f64 / third as f64);
                            theta * (c[k] as f64 + offset[k])
                        }
                        None => 0.0,
                    };
                    cos.push(T::of(angle.cos()));
                    sin.push(T::of(angle.sin()));
                }
            }
        }
        Ok(RotaryTable { cos, sin, d_head })
    }
}

/// Rotates `x: [S, n, heads, d_head]` token-wise.
pub fn rotary_rotate<T: Real>(g: &mut Graph<T>, x: Var, table: &RotaryTable<T>) -> Result<Var> {
    if g.shape(x).get(3) != Some(&table.d_head) {
        return Err(dim_err!("rotary table for d_head {} applied to {:?}", table.d_head, g.shape(x)));
    }
    g.rotary(x, table.cos.clone(), table.sin.clone())
}
