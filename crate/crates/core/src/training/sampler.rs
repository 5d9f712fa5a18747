use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};

/// Infinite with-replacement stream; each sample weighs `1 / count(class)`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(labels: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        for &l in labels {
            if l >= classes {
                return Err(config_err!("label {l} outside {classes} classes"));
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(config_err!("class {c} has no samples"));
        }
        let w: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
        let dist = WeightedIndex::new(&w).map_err(|e| config_err!("weighted sampler: {e}"))?;
        Ok(WeightedSampler { dist, rng: ChaCha8Rng::seed_from_u64(seed) })
    }
}

impl Iterator for WeightedSampler {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        Some(self.dist.sample(&mut self.rng))
    }
}
