use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, cosine_warmup_lr, cutmix, mixup, sam_step, stream_seed, AdamState, OptimizerConfig, OptimizerKind};
use super::{ScheduleConfig, SoftBatch, WeightedSampler};
use crate::error::{config_err, Error, Result};
use crate::evaluation::{accuracy_from_scores, auc, positive_probability};
use crate::models::Model;
use crate::tensor::{Grads, ParamStore};
use crate::tokenizer::Volume;
use crate::transformer::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// `steps_per_epoch == 0` means one pass: `ceil(n_train / batch_size)`.
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub mixup_prob: f64,
    pub cutmix_prob: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub seed: u64,
    /// Threads computing per-sample gradients; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig { steps_per_epoch: 0, ..Default::default() },
            batch_size: 16,
            mixup_prob: 0.5,
            cutmix_prob: 0.5,
            mixup_alpha: 0.2,
            cutmix_alpha: 1.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        for (n, p) in [("mixup", self.mixup_prob), ("cutmix", self.cutmix_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{n} probability must lie in [0, 1], got {p}"));
            }
        }
        if self.mixup_prob + self.cutmix_prob > 1.0 + 1e-12 {
            return Err(config_err!(
                "mixup and cutmix are exclusive per batch; probabilities sum to {}",
                self.mixup_prob + self.cutmix_prob
            ));
        }
        if !(self.mixup_alpha > 0.0 && self.cutmix_alpha > 0.0) {
            return Err(config_err!("mixing alphas must be positive"));
        }
        Ok(())
    }

    /// Schedule with steps per epoch resolved against the training set size.
    pub fn resolved_schedule(&self, n_train: usize) -> ScheduleConfig {
        let mut s = self.schedule;
        if s.steps_per_epoch == 0 {
            s.steps_per_epoch = n_train.div_ceil(self.batch_size).max(1);
        }
        s
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the highest validation accuracy (initial ones if no epoch ran).
    pub best: ParamStore<f32>,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochMetrics>,
}

/// Mean loss and mean gradient of a batch at `params`.
///
/// Sample `i` uses dropout stream `seeds[i]`. Per-sample gradients are
/// summed in sample order, so the result is identical for any worker count.
pub fn batch_loss_and_grads(
    model: &Model<f32>,
    params: &ParamStore<f32>,
    batch: &SoftBatch,
    seeds: &[u64],
    workers: usize,
) -> Result<(f64, Grads<f32>)> {
    let n = batch.len();
    let one = |i: usize| {
        let mut ctx = Ctx::train(seeds[i]);
        model.loss_and_grads_at(params, &batch.volumes[i], &batch.targets[i], &mut ctx)
    };
    let results: Vec<Result<(f64, Grads<f32>)>> = if workers <= 1 || n <= 1 {
        (0..n).map(one).collect()
    } else {
        let chunk = n.div_ceil(workers.min(n));
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|lo| {
                    let one = &one;
                    s.spawn(move || (lo..(lo + chunk).min(n)).map(one).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("gradient worker panicked")).collect()
        })
    };
    let mut total = 0.0;
    let mut acc: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for r in results {
        let (l, g) = r?;
        total += l;
        for (a, gi) in acc.iter_mut().zip(&g) {
            for (x, &y) in a.iter_mut().zip(gi) {
                *x += y as f64;
            }
        }
    }
    let inv = 1.0 / n as f64;
    Ok((total * inv, acc.into_iter().map(|a| a.into_iter().map(|x| (x * inv) as f32).collect()).collect()))
}

/// Accuracy and, for two classes, AUC of the positive-class probability.
fn validate(model: &Model<f32>, data: &[Volume]) -> Result<(f64, Option<f64>)> {
    let mut scores = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for v in data {
        let z = model.predict(v)?;
        let label = v.label.ok_or_else(|| config_err!("validation volume without a label"))?;
        let arg = z.iter().enumerate().fold(0, |b, (i, &x)| if x > z[b] { i } else { b });
        correct += usize::from(arg == label);
        if z.len() == 2 {
            scores.push(positive_probability(&z));
            labels.push(label);
        }
    }
    let acc = if scores.len() == data.len() {
        accuracy_from_scores(&scores, &labels, 0.5)?
    } else {
        correct as f64 / data.len() as f64
    };
    let auc = if scores.len() == data.len() { auc(&scores, &labels).ok() } else { None };
    Ok((acc, auc))
}

/// Runs `schedule.epochs` epochs of class-balanced, mixed-batch training.
///
/// `on_epoch` sees each metrics line as it is produced (the CLI appends it
/// to the log file) and may end the run by returning `Break`. On a
/// non-finite loss the run aborts with [`Error::Numerical`].
pub fn train_loop(
    model: &mut Model<f32>,
    train: &[Volume],
    val: &[Volume],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<ControlFlow<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sched = cfg.resolved_schedule(train.len());
    sched.validate(cfg.optimizer.lr)?;
    let mut out = TrainOutcome { best: model.params.clone(), best_epoch: None, log: Vec::new() };
    if sched.epochs == 0 {
        return Ok(out);
    }
    if train.is_empty() || val.is_empty() {
        return Err(config_err!("training needs nonempty train and validation splits"));
    }
    let classes = model.config.classes;
    let labels = train
        .iter()
        .map(|v| v.label.ok_or_else(|| config_err!("training volume without a label")))
        .collect::<Result<Vec<_>>>()?;
    let mut sampler = WeightedSampler::new(&labels, classes, stream_seed(cfg.seed, &[0]))?;
    let mut state = AdamState::new(&model.params);
    let mut best_acc = f64::NEG_INFINITY;
    let mut step = 0usize;
    for epoch in 0..sched.epochs {
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for local in 0..sched.steps_per_epoch {
            lr = cosine_warmup_lr(step, &sched, cfg.optimizer.lr)?;
            let idx: Vec<usize> = sampler.by_ref().take(cfg.batch_size).collect();
            let base = SoftBatch::from_labeled(idx.iter().map(|&i| train[i].clone()).collect(), classes)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[1, step as u64]));
            let u: f64 = rng.random();
            let batch = if u < cfg.mixup_prob {
                mixup(&base, cfg.mixup_alpha, &mut rng)?
            } else if u < cfg.mixup_prob + cfg.cutmix_prob {
                cutmix(&base, cfg.cutmix_alpha, &mut rng)?
            } else {
                base
            };
            let seeds: Vec<u64> = (0..batch.len()).map(|i| stream_seed(cfg.seed, &[2, step as u64, i as u64])).collect();
            let loss = match cfg.optimizer.kind {
                OptimizerKind::Adamw => {
                    let (l, g) = batch_loss_and_grads(model, &model.params, &batch, &seeds, cfg.workers)?;
                    if l.is_finite() {
                        adamw_step(&mut model.params, &g, &mut state, &cfg.optimizer, lr)?;
                    }
                    l
                }
                OptimizerKind::SamAdam => {
                    let m: &Model<f32> = model;
                    let mut params = m.params.clone();
                    let l = sam_step(&mut params, &mut state, &cfg.optimizer, lr, |p| {
                        batch_loss_and_grads(m, p, &batch, &seeds, cfg.workers)
                    })?;
                    model.params = params;
                    l
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numerical { epoch, step: local, msg: format!("training loss is {loss}") });
            }
            loss_sum += loss;
            step += 1;
        }
        let (val_acc, val_auc) = validate(model, val)?;
        let m = EpochMetrics { epoch, lr, train_loss: loss_sum / sched.steps_per_epoch as f64, val_acc, val_auc };
        let flow = on_epoch(&m)?;
        if val_acc > best_acc {
            best_acc = val_acc;
            out.best = model.params.clone();
            out.best_epoch = Some(epoch);
        }
        out.log.push(m);
        if flow.is_break() {
            break;
        }
    }
    Ok(out)
}
