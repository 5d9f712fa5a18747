//! Optimizers, learning-rate schedule, soft-label loss, batch mixing,
//! class-balanced sampling and the epoch loop.

mod epoch;
mod mix;
mod optim;
mod sampler;
mod schedule;

pub use epoch::{batch_loss_and_grads, train_loop, EpochMetrics, TrainConfig, TrainOutcome};
pub use mix::{cutmix, cutmix_with, mixup, mixup_with, CutBox};
pub use optim::{adamw_step, grad_norm, sam_step, AdamState, OptimizerConfig, OptimizerKind};
pub use sampler::WeightedSampler;
pub use schedule::{cosine_warmup_lr, ScheduleConfig};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::tokenizer::Volume;

/// Volumes with simplex-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBatch {
    pub volumes: Vec<Volume>,
    pub targets: Vec<Vec<f64>>,
}

impl SoftBatch {
    /// One-hot targets from volume labels.
    pub fn from_labeled(volumes: Vec<Volume>, classes: usize) -> Result<Self> {
        let targets = volumes
            .iter()
            .map(|v| {
                let l = v.label.ok_or_else(|| contract_err!("training volume without a label"))?;
                if l >= classes {
                    return Err(contract_err!("label {l} outside {classes} classes"));
                }
                Ok(crate::models::one_hot(l, classes))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SoftBatch { volumes, targets })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// Worst deviation of any target from the probability simplex.
    pub fn simplex_error(&self) -> f64 {
        self.targets
            .iter()
            .map(|t| {
                let neg = t.iter().fold(0.0f64, |m, &v| m.max(-v));
                neg.max((t.iter().sum::<f64>() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// `−Σ_c t_c · log softmax(z)_c`, averaged over rows. `logits` is `[C]` or
/// `[B, C]` and `target` is the row-major flattening of matching shape.
pub fn soft_cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, target: &[f64]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let n: usize = shape.iter().product();
    if target.len() != n {
        return Err(dim_err!("target has {} entries, logits {:?}", target.len(), shape));
    }
    let rows = n / shape[shape.len() - 1];
    let ls = g.log_softmax(logits, shape.len() - 1)?;
    let t = g.constant(Tensor::from_f64(&shape, target)?);
    let p = g.mul(ls, t)?;
    let s = g.sum(p);
    Ok(g.scale(s, -1.0 / rows as f64))
}

/// Derives an independent RNG seed from a base seed and a stream path.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)))
}
