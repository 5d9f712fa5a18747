//! Batch-level label mixing. Partners are drawn by a random permutation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::SoftBatch;
use crate::error::{config_err, Result};

fn beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(alpha, alpha).map_err(|e| config_err!("invalid beta parameter {alpha}: {e}"))?;
    Ok(d.sample(rng))
}

fn partners<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// `x′ = λ·x_i + (1−λ)·x_perm[i]`, same for targets.
pub fn mixup_with(batch: &SoftBatch, lambda: f64, perm: &[usize]) -> SoftBatch {
    let mut out = batch.clone();
    let l = lambda as f32;
    for (i, &j) in perm.iter().enumerate() {
        let (a, b) = (&batch.volumes[i], &batch.volumes[j]);
        for (o, (&x, &y)) in out.volumes[i].data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
            *o = l * x + (1.0 - l) * y;
        }
        for (o, (&x, &y)) in out.targets[i].iter_mut().zip(batch.targets[i].iter().zip(&batch.targets[j])) {
            *o = lambda * x + (1.0 - lambda) * y;
        }
    }
    out
}

pub fn mixup<R: Rng + ?Sized>(batch: &SoftBatch, alpha: f64, rng: &mut R) -> Result<SoftBatch> {
    if !(alpha > 0.0) {
        return Err(config_err!("mixup alpha must be positive, got {alpha}"));
    }
    if batch.len() < 2 {
        return Ok(batch.clone());
    }
    let lambda = beta(alpha, rng)?;
    let perm = partners(batch.len(), rng);
    Ok(mixup_with(batch, lambda, &perm))
}

/// Axis-aligned box, `start + size ≤ extent` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

impl CutBox {
    pub fn voxels(&self) -> usize {
        self.size.iter().product()
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let c = [x, y, z];
        (0..3).all(|a| c[a] >= self.start[a] && c[a] < self.start[a] + self.size[a])
    }

    /// Box covering a `1 − λ` fraction (per-axis rounded), placed uniformly.
    pub fn sample<R: Rng + ?Sized>(dims: [usize; 3], lambda: f64, rng: &mut R) -> Self {
        let f = (1.0 - lambda).clamp(0.0, 1.0).cbrt();
        let mut size = [0; 3];
        let mut start = [0; 3];
        for a in 0..3 {
            size[a] = ((dims[a] as f64 * f).round() as usize).min(dims[a]);
            start[a] = rng.random_range(0..=dims[a] - size[a]);
        }
        CutBox { start, size }
    }
}

/// Pastes `cut` from each partner into sample `i`; target weights follow the
/// exact voxel fraction replaced.
pub fn cutmix_with(batch: &SoftBatch, cut: CutBox, perm: &[usize]) -> SoftBatch {
    let mut out = batch.clone();
    if batch.is_empty() {
        return out;
    }
    let dims = batch.volumes[0].dims();
    let total: usize = dims.iter().product();
    let inside = cut.voxels();
    let w_partner = inside as f64 / total as f64;
    for (i, &j) in perm.iter().enumerate() {
        if inside > 0 {
            for x in cut.start[0]..cut.start[0] + cut.size[0] {
                for y in cut.start[1]..cut.start[1] + cut.size[1] {
                    for z in cut.start[2]..cut.start[2] + cut.size[2] {
                        let v = batch.volumes[j].get(x, y, z);
                        out.volumes[i].set(x, y, z, v);
                    }
                }
            }
        }
        for (o, (&a, &b)) in out.targets[i].iter_mut().zip(batch.targets[i].iter().zip(&batch.targets[j])) {
            *o = (1.0 - w_partner) * a + w_partner * b;
        }
    }
    out
}

pub fn cutmix<R: Rng + ?Sized>(batch: &SoftBatch, alpha: f64, rng: &mut R) -> Result<SoftBatch> {
    if !(alpha > 0.0) {
        return Err(config_err!("cutmix alpha must be positive, got {alpha}"));
    }
    if batch.len() < 2 {
        return Ok(batch.clone());
    }
    let lambda = beta(alpha, rng)?;
    let cut = CutBox::sample(batch.volumes[0].dims(), lambda, rng);
    let perm = partners(batch.len(), rng);
    Ok(cutmix_with(batch, cut, &perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Volume;

    fn pair() -> SoftBatch {
        SoftBatch {
            volumes: vec![Volume::from_fn([4; 3], |_, _, _| 0.2), Volume::from_fn([4; 3], |_, _, _| 0.8)],
            targets: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }

    #[test]
    fn mixup_half() {
        let m = mixup_with(&pair(), 0.5, &[1, 0]);
        assert_eq!(m.targets[0], vec![0.5, 0.5]);
        assert!(m.volumes[0].data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert_eq!(mixup_with(&pair(), 1.0, &[1, 0]), pair());
    }

    #[test]
    fn cutmix_extremes() {
        let b = pair();
        let none = cutmix_with(&b, CutBox { start: [1, 1, 1], size: [0, 2, 2] }, &[1, 0]);
        assert_eq!(none, b);
        let all = cutmix_with(&b, CutBox { start: [0; 3], size: [4; 3] }, &[1, 0]);
        assert_eq!(all.volumes[0], b.volumes[1]);
        assert_eq!(all.targets[0], b.targets[1]);
    }

    #[test]
    fn single_sample_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let b = SoftBatch { volumes: vec![pair().volumes[0].clone()], targets: vec![vec![1.0, 0.0]] };
        assert_eq!(mixup(&b, 0.2, &mut rng).unwrap(), b);
        assert_eq!(cutmix(&b, 1.0, &mut rng).unwrap(), b);
    }

    use rand::SeedableRng;
}
