use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, val: 0.1, test: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val > 0.0 && self.test > 0.0) {
            return Err(config_err!("split fractions must be positive"));
        }
        if (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(config_err!("split fractions sum to {}, expected 1", self.train + self.val + self.test));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n` cut into (train, val, test); val and test get
/// `round(n·fraction)` items, train the rest.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let nv = (n as f64 * spec.val).round() as usize;
    let nt = (n as f64 * spec.test).round() as usize;
    if nv == 0 || nt == 0 || nv + nt >= n {
        return Err(config_err!("{n} samples cannot fill train/val/test at {}/{}/{}", spec.train, spec.val, spec.test));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = idx.split_off(n - nt);
    let val = idx.split_off(n - nt - nv);
    Ok((idx, val, test))
}

/// Splits distinct sources, then assigns every item with its source.
/// Returns item indices.
pub fn split_by_source(sources: &[usize], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut uniq = sources.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let (tr, va, te) = split_indices(uniq.len(), spec)?;
    let mut which = std::collections::HashMap::new();
    for (set, ids) in [(0, tr), (1, va), (2, te)] {
        for i in ids {
            which.insert(uniq[i], set);
        }
    }
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (item, s) in sources.iter().enumerate() {
        match which[s] {
            0 => out.0.push(item),
            1 => out.1.push(item),
            _ => out.2.push(item),
        }
    }
    Ok(out)
}
