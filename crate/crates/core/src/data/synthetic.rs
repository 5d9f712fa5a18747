//! Planted-signal volumes.
//!
//! Every sample shares a y-symmetric background (a soft blob plus two
//! ellipsoids straddling the y midline). Class 1 enlarges the anterior
//! (high-y) ellipsoid by `1 + s` and brightens an anterior slab by `0.2·s`;
//! class 0 is the exact y-mirror of the class-1 construction. Per-sample
//! jitter depends only on `(seed, index)`, so the `i`-th sample of each
//! class shares it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tokenizer::Volume;
use crate::training::stream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub edge: usize,
    pub per_class: usize,
    /// Signal strength `s`.
    pub signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { edge: 32, per_class: 64, signal: 0.5, noise: 0.05, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.edge < 4 {
            return Err(config_err!("synthetic edge must be at least 4, got {}", self.edge));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(config_err!("signal strength must lie in [0, 1], got {}", self.signal));
        }
        if !(self.noise >= 0.0) {
            return Err(config_err!("noise sigma must be nonnegative, got {}", self.noise));
        }
        Ok(())
    }
}

struct Jitter {
    amp: f64,
    cx: f64,
    cz: f64,
    radius: f64,
}

/// Class-1 intensity at normalized coordinates in `[0, 1]³`.
fn class_one(u: [f64; 3], j: &Jitter, s: f64) -> f64 {
    let [x, y, z] = u;
    let d2 = (x - j.cx).powi(2) + (y - 0.5).powi(2) + (z - j.cz).powi(2);
    let mut v = j.amp * (-d2 / (2.0 * 0.22f64.powi(2))).exp();
    let r = [0.12 * j.radius, 0.09 * j.radius, 0.10 * j.radius];
    let inside = |cy: f64, k: f64| {
        ((x - j.cx) / (r[0] * k)).powi(2) + ((y - cy) / (r[1] * k)).powi(2) + ((z - j.cz) / (r[2] * k)).powi(2) <= 1.0
    };
    if inside(0.5 - 0.22, 1.0) {
        v += 0.25;
    }
    if inside(0.5 + 0.22, 1.0 + s) {
        v += 0.25;
    }
    if (0.65..0.9).contains(&y) && (0.3..0.7).contains(&x) && (0.3..0.7).contains(&z) {
        v += 0.2 * s;
    }
    v
}

/// Interleaved as `[class 0 #0, class 1 #0, class 0 #1, …]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    let l = spec.edge;
    let c = |i: usize| (i as f64 + 0.5) / l as f64;
    let mut out = Vec::with_capacity(2 * spec.per_class);
    for i in 0..spec.per_class {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &[i as u64]));
        let j = Jitter {
            amp: rng.random_range(0.45..0.55),
            cx: 0.5 + rng.random_range(-0.03..0.03),
            cz: 0.5 + rng.random_range(-0.03..0.03),
            radius: rng.random_range(0.9..1.1),
        };
        let one = Volume::from_fn([l; 3], |x, y, z| class_one([c(x), c(y), c(z)], &j, spec.signal) as f32);
        let zero = Volume::from_fn([l; 3], |x, y, z| one.get(x, l - 1 - y, z));
        for (label, mut v) in [(0usize, zero), (1, one)] {
            if spec.noise > 0.0 {
                let n = Normal::new(0.0, spec.noise).map_err(|e| config_err!("noise: {e}"))?;
                let mut nr = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &[i as u64, 1 + label as u64]));
                for x in v.data_mut() {
                    *x += n.sample(&mut nr) as f32;
                }
            }
            v.clamp01();
            out.push(v.with_label(Some(label)));
        }
    }
    Ok(out)
}

/// Held-out accuracy of the mean-difference linear probe: `w = μ₁ − μ₀`,
/// threshold halfway between the projected class means of `train`.
pub fn linear_probe_accuracy(train: &[Volume], test: &[Volume]) -> f64 {
    let n = train[0].voxel_count();
    let mut mu = [vec![0.0f64; n], vec![0.0f64; n]];
    let mut cnt = [0usize; 2];
    for v in train {
        let l = v.label.unwrap_or(0).min(1);
        cnt[l] += 1;
        for (m, &x) in mu[l].iter_mut().zip(v.data()) {
            *m += x as f64;
        }
    }
    for (m, &k) in mu.iter_mut().zip(&cnt) {
        m.iter_mut().for_each(|x| *x /= k.max(1) as f64);
    }
    let w: Vec<f64> = mu[1].iter().zip(&mu[0]).map(|(a, b)| a - b).collect();
    let proj = |d: &[f64]| d.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let t = 0.5 * (proj(&mu[0]) + proj(&mu[1]));
    let ok = test
        .iter()
        .filter(|v| {
            let d: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
            usize::from(proj(&d) > t) == v.label.unwrap_or(0)
        })
        .count();
    ok as f64 / test.len() as f64
}
