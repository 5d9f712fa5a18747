mod common;

use std::ops::ControlFlow;

use minit::data::{generate_synthetic, SyntheticSpec};
use minit::models::{preset, Model, ModelConfig, Variant};
use minit::tensor::{ParamStore, Tensor};
use minit::training::{
    adamw_step, batch_loss_and_grads, sam_step, train_loop, AdamState, OptimizerConfig, OptimizerKind, SoftBatch, TrainConfig,
    WeightedSampler,
};
use minit::transformer::{EncoderConfig, Flavor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(values: &[Vec<f64>]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, v) in values.iter().enumerate() {
        s.add(format!("p{i}"), Tensor::from_f64(&[v.len()], v).unwrap());
    }
    s
}

fn flat(s: &ParamStore<f64>) -> Vec<Vec<f64>> {
    s.tensors().iter().map(|t| t.to_f64()).collect()
}

/// Textbook Adam without any weight decay.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn step(&mut self, theta: &mut [Vec<f64>], g: &[Vec<f64>], cfg: &OptimizerConfig, lr: f64) {
        self.t += 1;
        for i in 0..theta.len() {
            for j in 0..theta[i].len() {
                self.m[i][j] = cfg.beta1 * self.m[i][j] + (1.0 - cfg.beta1) * g[i][j];
                self.v[i][j] = cfg.beta2 * self.v[i][j] + (1.0 - cfg.beta2) * g[i][j] * g[i][j];
                let mh = self.m[i][j] / (1.0 - cfg.beta1.powi(self.t));
                let vh = self.v[i][j] / (1.0 - cfg.beta2.powi(self.t));
                theta[i][j] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}

fn random_grads(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<Vec<f64>> {
    shape.iter().map(|&n| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn adamw_without_decay_is_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = random_grads(&mut rng, &[3, 5]);
    let mut s = store(&init);
    let mut st = AdamState::new(&s);
    let mut theta = init.clone();
    let mut oracle = Adam { m: vec![vec![0.0; 3], vec![0.0; 5]], v: vec![vec![0.0; 3], vec![0.0; 5]], t: 0 };
    let cfg = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
    for k in 0..20 {
        let g = random_grads(&mut rng, &[3, 5]);
        let lr = 1e-2 / (1 + k) as f64;
        adamw_step(&mut s, &g, &mut st, &cfg, lr).unwrap();
        oracle.step(&mut theta, &g, &cfg, lr);
        assert_eq!(flat(&s), theta);
    }
}

#[test]
fn sam_without_radius_matches_base_and_counts_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let init = random_grads(&mut rng, &[4]);
    let grad = |p: &ParamStore<f64>| -> Vec<Vec<f64>> { flat(p).iter().map(|t| t.iter().map(|x| 2.0 * x + 0.3).collect()).collect() };
    let loss = |p: &ParamStore<f64>| flat(p)[0].iter().map(|x| x * x + 0.3 * x).sum::<f64>();
    let cfg = OptimizerConfig { rho: 0.0, lr: 0.05, ..Default::default() };
    let (mut a, mut b) = (store(&init), store(&init));
    let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
    for _ in 0..10 {
        let mut evals = 0;
        sam_step(&mut a, &mut sa, &cfg, cfg.lr, |p| {
            evals += 1;
            Ok((loss(p), grad(p)))
        })
        .unwrap();
        assert_eq!(evals, 2);
        let g = grad(&b);
        adamw_step(&mut b, &g, &mut sb, &cfg, cfg.lr).unwrap();
        for (x, y) in flat(&a)[0].iter().zip(&flat(&b)[0]) {
            assert!((x - y).abs() < 1e-7);
        }
    }
}

#[test]
fn sampler_balances_imbalanced_labels() {
    let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    let draws: Vec<usize> = WeightedSampler::new(&labels, 2, 3).unwrap().take(100_000).collect();
    let minority = draws.iter().filter(|&&i| labels[i] == 1).count() as f64 / 1e5;
    assert!((0.48..=0.52).contains(&minority), "minority frequency {minority}");
    let again: Vec<usize> = WeightedSampler::new(&labels, 2, 3).unwrap().take(1000).collect();
    assert_eq!(&draws[..1000], &again[..]);
}

fn desk_data(per_class: usize) -> Vec<minit::tokenizer::Volume> {
    generate_synthetic(&SyntheticSpec { per_class, ..Default::default() }).unwrap()
}

#[test]
fn nit_loss_decreases_on_fixed_batch() {
    let p = preset("nit-desk").unwrap();
    let mut m = Model::<f32>::new(p.model, 1).unwrap();
    let batch = SoftBatch::from_labeled(desk_data(4), 2).unwrap();
    let cfg = OptimizerConfig { lr: p.lr, weight_decay: p.weight_decay, ..Default::default() };
    let mut st = AdamState::new(&m.params);
    let seeds: Vec<u64> = (0..batch.len() as u64).collect();
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (l, g) = batch_loss_and_grads(&m, &m.params, &batch, &seeds, 1).unwrap();
        losses.push(l);
        adamw_step(&mut m.params, &g, &mut st, &cfg, cfg.lr).unwrap();
    }
    assert!(losses[49] < losses[0], "first {} last {}", losses[0], losses[49]);
}

fn small_model() -> Model<f32> {
    let encoder = EncoderConfig { layers: 1, heads: 2, dim: 8, mlp_dim: 8, flavor: Flavor::Vanilla, dropout: 0.1, rotary: false };
    let c = ModelConfig { variant: Variant::Minit, encoder, input: [8; 3], block_edge: 4, patch_edge: Some(2), classes: 2 };
    Model::new(c, 5).unwrap()
}

fn small_data() -> (Vec<minit::tokenizer::Volume>, Vec<minit::tokenizer::Volume>) {
    let d = generate_synthetic(&SyntheticSpec { edge: 8, per_class: 10, ..Default::default() }).unwrap();
    (d[..16].to_vec(), d[16..].to_vec())
}

fn quick_cfg(workers: usize, kind: OptimizerKind) -> TrainConfig {
    let mut cfg = TrainConfig { batch_size: 4, workers, seed: 11, ..Default::default() };
    cfg.optimizer.kind = kind;
    cfg.optimizer.lr = 1e-3;
    cfg.schedule.epochs = 3;
    cfg.schedule.warmup_epochs = 1;
    cfg
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let mut m = small_model();
    let initial = m.params.clone();
    let (tr, va) = small_data();
    let mut cfg = quick_cfg(1, OptimizerKind::Adamw);
    cfg.schedule.epochs = 0;
    cfg.schedule.warmup_epochs = 0;
    let out = train_loop(&mut m, &tr, &va, &cfg, |_| Ok(ControlFlow::Continue(()))).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
    assert_eq!(flat_f32(&out.best), flat_f32(&initial));
}

fn flat_f32(s: &ParamStore<f32>) -> Vec<Vec<f32>> {
    s.tensors().iter().map(|t| t.data().to_vec()).collect()
}

#[test]
fn training_is_deterministic_for_any_worker_count() {
    for kind in [OptimizerKind::Adamw, OptimizerKind::SamAdam] {
        let (tr, va) = small_data();
        let logs: Vec<String> = [1, 1, 3]
            .iter()
            .map(|&w| {
                let mut m = small_model();
                let out = train_loop(&mut m, &tr, &va, &quick_cfg(w, kind), |_| Ok(ControlFlow::Continue(()))).unwrap();
                assert_eq!(out.log.len(), 3);
                serde_json::to_string(&out.log).unwrap() + &format!("{:?}", flat_f32(&m.params))
            })
            .collect();
        assert_eq!(logs[0], logs[1]);
        assert_eq!(logs[0], logs[2]);
    }
}

#[test]
fn break_stops_after_the_current_epoch() {
    let mut m = small_model();
    let (tr, va) = small_data();
    let out = train_loop(&mut m, &tr, &va, &quick_cfg(1, OptimizerKind::Adamw), |e| {
        Ok(if e.epoch == 1 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
    })
    .unwrap();
    assert_eq!(out.log.len(), 2);
}
