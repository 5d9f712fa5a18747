use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tokenizer::{grid_coord, Volume};
use crate::training::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Per-axis flip probability.
    pub flip_prob: [f64; 3],
    /// Maximum absolute rotation about each axis, degrees.
    pub rotation_deg: f64,
    /// Isotropic scale drawn uniformly from `[lo, hi]`.
    pub scale_range: [f64; 2],
    /// Maximum absolute shift per axis, voxels.
    pub translation: f64,
    pub noise_sigma: f64,
    pub swap_edge: usize,
    pub swap_count: usize,
    /// Final size over base size (the original counts as one).
    pub factor: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            flip_prob: [0.5, 0.0, 0.0],
            rotation_deg: 10.0,
            scale_range: [0.9, 1.1],
            translation: 2.0,
            noise_sigma: 0.01,
            swap_edge: 16,
            swap_count: 2,
            factor: 10,
        }
    }
}

impl AugmentationSpec {
    /// Leaves every copy equal to its source.
    pub fn identity(factor: usize) -> Self {
        AugmentationSpec {
            flip_prob: [0.0; 3],
            rotation_deg: 0.0,
            scale_range: [1.0, 1.0],
            translation: 0.0,
            noise_sigma: 0.0,
            swap_count: 0,
            factor,
            ..Default::default()
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.flip_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(config_err!("flip probabilities must lie in [0, 1], got {:?}", self.flip_prob));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(config_err!("scale range [{lo}, {hi}] must be positive and ordered"));
        }
        if !(self.rotation_deg >= 0.0 && self.translation >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(config_err!("rotation, translation and noise limits must be nonnegative"));
        }
        if self.factor == 0 {
            return Err(config_err!("augmentation factor must be at least 1"));
        }
        if self.swap_count > 0 {
            let e = self.swap_edge;
            if e == 0 || dims.iter().any(|d| d % e != 0) {
                return Err(config_err!("swap patch edge {e} does not divide volume extents {dims:?}"));
            }
            let cells: usize = dims.iter().map(|d| d / e).product();
            if 2 * self.swap_count > cells {
                return Err(config_err!("{} disjoint swap pairs need {} patches, volume has {cells}", self.swap_count, 2 * self.swap_count));
            }
        }
        Ok(())
    }
}

/// Reverses axis `axis` in place.
pub fn flip_axis(v: &Volume, axis: usize) -> Volume {
    let d = v.dims();
    Volume::from_fn(d, |x, y, z| {
        let mut c = [x, y, z];
        c[axis] = d[axis] - 1 - c[axis];
        v.get(c[0], c[1], c[2])
    })
    .with_label(v.label)
}

/// Rotation (x, then y, then z), isotropic scale and shift about the centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub angles_deg: [f64; 3],
    pub scale: f64,
    pub shift: [f64; 3],
}

impl Affine {
    pub fn is_identity(&self) -> bool {
        self.angles_deg == [0.0; 3] && self.scale == 1.0 && self.shift == [0.0; 3]
    }

    /// Forward linear part `S · Rz · Ry · Rx`.
    fn matrix(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.angles_deg.map(f64::to_radians);
        let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rz = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
        let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    r[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
                }
            }
            r
        };
        let mut m = mul(rz, mul(ry, rx));
        m.iter_mut().flatten().for_each(|x| *x *= self.scale);
        m
    }
}

/// Trilinear resampling; samples outside the volume read as zero.
pub fn affine_resample(v: &Volume, t: &Affine) -> Volume {
    if t.is_identity() {
        return v.clone();
    }
    let d = v.dims();
    let m = t.matrix();
    // Inverse of a scaled rotation: transpose divided by scale².
    let s2 = t.scale * t.scale;
    let inv = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| (0..3).map(|k| m[k][i] * p[k]).sum::<f64>() / s2) };
    let ctr: [f64; 3] = std::array::from_fn(|a| (d[a] as f64 - 1.0) / 2.0);
    let fetch = |c: [i64; 3]| -> f64 {
        if (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < d[a]) {
            v.get(c[0] as usize, c[1] as usize, c[2] as usize) as f64
        } else {
            0.0
        }
    };
    Volume::from_fn(d, |x, y, z| {
        let q = [x as f64 - ctr[0] - t.shift[0], y as f64 - ctr[1] - t.shift[1], z as f64 - ctr[2] - t.shift[2]];
        let p = inv(q);
        let src: [f64; 3] = std::array::from_fn(|a| p[a] + ctr[a]);
        let base = src.map(|s| s.floor() as i64);
        let f: [f64; 3] = std::array::from_fn(|a| src[a] - base[a] as f64);
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] }).product();
            if w != 0.0 {
                acc += w * fetch(std::array::from_fn(|a| base[a] + o[a] as i64));
            }
        }
        acc as f32
    })
    .with_label(v.label)
}

/// Swaps `count` randomly chosen disjoint pairs of grid-aligned `edge³` patches.
pub fn swap_patches<R: Rng + ?Sized>(v: &mut Volume, edge: usize, count: usize, rng: &mut R) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let d = v.dims();
    if edge == 0 || d.iter().any(|x| x % edge != 0) {
        return Err(config_err!("swap patch edge {edge} does not divide volume extents {d:?}"));
    }
    let grid = d.map(|x| x / edge);
    let cells: usize = grid.iter().product();
    if 2 * count > cells {
        return Err(config_err!("{count} disjoint swap pairs need {} patches, volume has {cells}", 2 * count));
    }
    let picks = sample(rng, cells, 2 * count).into_vec();
    for pair in picks.chunks(2) {
        let (a, b) = (grid_coord(grid, pair[0]), grid_coord(grid, pair[1]));
        for i in 0..edge {
            for j in 0..edge {
                for k in 0..edge {
                    let pa = (a[0] * edge + i, a[1] * edge + j, a[2] * edge + k);
                    let pb = (b[0] * edge + i, b[1] * edge + j, b[2] * edge + k);
                    let va = v.get(pa.0, pa.1, pa.2);
                    let vb = v.get(pb.0, pb.1, pb.2);
                    v.set(pa.0, pa.1, pa.2, vb);
                    v.set(pb.0, pb.1, pb.2, va);
                }
            }
        }
    }
    Ok(())
}

/// Flips, affine, noise, patch swaps, clamp to `[0, 1]`.
pub fn augment_volume<R: Rng + ?Sized>(v: &Volume, spec: &AugmentationSpec, rng: &mut R) -> Result<Volume> {
    spec.validate(v.dims())?;
    let mut out = v.clone();
    for a in 0..3 {
        if spec.flip_prob[a] > 0.0 && rng.random::<f64>() < spec.flip_prob[a] {
            out = flip_axis(&out, a);
        }
    }
    let mut sym = |lim: f64| if lim > 0.0 { rng.random_range(-lim..=lim) } else { 0.0 };
    let angles = [sym(spec.rotation_deg), sym(spec.rotation_deg), sym(spec.rotation_deg)];
    let shift = [sym(spec.translation), sym(spec.translation), sym(spec.translation)];
    let [lo, hi] = spec.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    out = affine_resample(&out, &Affine { angles_deg: angles, scale, shift });
    if spec.noise_sigma > 0.0 {
        let n = Normal::new(0.0, spec.noise_sigma).map_err(|e| config_err!("noise: {e}"))?;
        out.data_mut().iter_mut().for_each(|x| *x += n.sample(rng) as f32);
    }
    swap_patches(&mut out, spec.swap_edge, spec.swap_count, rng)?;
    out.clamp01();
    Ok(out)
}

/// Each source followed by its `factor − 1` copies; copy `k` of source `i`
/// draws from stream `(seed, i, k)`.
pub fn augment_offline(data: &[Volume], spec: &AugmentationSpec, seed: u64) -> Result<Vec<Volume>> {
    let mut out = Vec::with_capacity(data.len() * spec.factor);
    for (i, v) in data.iter().enumerate() {
        spec.validate(v.dims())?;
        out.push(v.clone());
        for k in 1..spec.factor {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[i as u64, k as u64]));
            out.push(augment_volume(v, spec, &mut rng)?);
        }
    }
    Ok(out)
}
