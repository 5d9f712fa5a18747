//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use minit::tensor::{ParamStore, Real};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Central differences of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps round-off on
/// vanishing gradients from dominating.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

/// Replaces every parameter with `N(0, std²)` draws.
pub fn randomize<T: Real, R: Rng>(store: &mut ParamStore<T>, std: f64, rng: &mut R) {
    let n = Normal::new(0.0, std).unwrap();
    for t in store.tensors_mut() {
        for x in t.data_mut() {
            *x = T::of(n.sample(rng));
        }
    }
}

pub fn coords(grid: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for x in 0..grid[0] {
        for y in 0..grid[1] {
            for z in 0..grid[2] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Which token pairs a head group may connect.
#[derive(Debug, Clone, Copy)]
pub enum Mask {
    Full,
    /// Only the given axis varies.
    Axis(usize),
    /// The given axis is held fixed.
    Plane(usize),
}

impl Mask {
    pub fn allows(self, a: [usize; 3], b: [usize; 3]) -> bool {
        match self {
            Mask::Full => true,
            Mask::Axis(k) => (0..3).all(|i| i == k || a[i] == b[i]),
            Mask::Plane(k) => a[k] == b[k],
        }
    }
}

/// Dense affine map: `w` is `[din, dout]` row-major.
pub struct Lin {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub din: usize,
    pub dout: usize,
}

impl Lin {
    pub fn from_store<T: Real>(store: &ParamStore<T>, name: &str) -> Self {
        let w = store.get(store.by_name(&format!("{name}.weight")).unwrap());
        let b = store.get(store.by_name(&format!("{name}.bias")).unwrap());
        Lin { w: w.to_f64(), b: b.to_f64(), din: w.shape()[0], dout: w.shape()[1] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() / self.din;
        let mut y = vec![0.0; n * self.dout];
        for t in 0..n {
            for o in 0..self.dout {
                let mut s = self.b[o];
                for i in 0..self.din {
                    s += x[t * self.din + i] * self.w[i * self.dout + o];
                }
                y[t * self.dout + o] = s;
            }
        }
        y
    }
}

pub struct DenseMsa {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

impl DenseMsa {
    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Self {
        DenseMsa {
            q: Lin::from_store(store, &format!("{prefix}.q")),
            k: Lin::from_store(store, &format!("{prefix}.k")),
            v: Lin::from_store(store, &format!("{prefix}.v")),
            o: Lin::from_store(store, &format!("{prefix}.out")),
        }
    }

    /// One attention stage over `n` tokens of width `d`. Head `h` belongs
    /// to the group whose cumulative head range contains it. Returns the
    /// output and the head-averaged `n × n` probabilities.
    pub fn stage(&self, x: &[f64], pos: &[[usize; 3]], heads: usize, groups: &[(usize, Mask)]) -> (Vec<f64>, Vec<f64>) {
        let n = pos.len();
        let d = self.q.din;
        let dh = d / heads;
        let (q, k, v) = (self.q.apply(x), self.k.apply(x), self.v.apply(x));
        let mut cat = vec![0.0; n * d];
        let mut avg = vec![0.0; n * n];
        let mut h = 0;
        for &(gh, mask) in groups {
            for _ in 0..gh {
                for i in 0..n {
                    let mut w = vec![f64::NEG_INFINITY; n];
                    for j in 0..n {
                        if mask.allows(pos[i], pos[j]) {
                            w[j] = (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt();
                        }
                    }
                    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = w.iter().map(|&s| if s.is_finite() { (s - m).exp() } else { 0.0 }).collect();
                    let z: f64 = e.iter().sum();
                    for j in 0..n {
                        let p = e[j] / z;
                        avg[i * n + j] += p / heads as f64;
                        for c in 0..dh {
                            cat[i * d + h * dh + c] += p * v[j * d + h * dh + c];
                        }
                    }
                }
                h += 1;
            }
        }
        (self.o.apply(&cat), avg)
    }
}

use minit::tensor::{Graph, Tensor};
use minit::tokenizer::TokenSequence;
use minit::transformer::{axile_msa, dp_factorized_msa, msa, plane_axis_msa, Ctx, MsaParams, PlaneAxisParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum AttnKind {
    Vanilla,
    Axile,
    DotProduct,
    PlaneSequential(usize),
    PlaneSplit(usize),
}

pub const ALL_KINDS: [AttnKind; 9] = [
    AttnKind::Vanilla,
    AttnKind::Axile,
    AttnKind::DotProduct,
    AttnKind::PlaneSequential(0),
    AttnKind::PlaneSequential(1),
    AttnKind::PlaneSequential(2),
    AttnKind::PlaneSplit(0),
    AttnKind::PlaneSplit(1),
    AttnKind::PlaneSplit(2),
];

/// Runs one attention flavor through the library and through the dense
/// masked oracle on a random grid (each extent 1..=3), batch 2, D = 12,
/// 6 heads. Returns the largest absolute difference across outputs and
/// recorded attention matrices.
pub fn attention_oracle_error(kind: AttnKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
    let (d, heads, batch) = (12, 6, 2);
    let pos = coords(grid);
    let n = pos.len();
    let mut store = ParamStore::<f64>::new();
    let names: Vec<&str> = match kind {
        AttnKind::Axile => vec!["s0", "s1", "s2"],
        AttnKind::PlaneSequential(_) => vec!["plane", "axis"],
        _ => vec!["s0"],
    };
    let params: Vec<MsaParams> = names.iter().map(|p| MsaParams::new(&mut store, p, d, &mut rng)).collect();
    randomize(&mut store, 0.5, &mut rng);
    let x: Vec<f64> = (0..batch * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut g = Graph::<f64>::new();
    let bound = store.bind_frozen(&mut g);
    let tokens = g.constant(Tensor::from_f64(&[batch, n, d], &x).unwrap());
    let seq = TokenSequence { tokens, grid, has_class_token: false };
    let ctx = Ctx::recording();
    let (out, rec) = match kind {
        AttnKind::Vanilla => msa(&mut g, &ctx, &params[0], &bound, seq, heads, None),
        AttnKind::Axile => axile_msa(&mut g, &ctx, &[params[0], params[1], params[2]], &bound, seq, heads, None),
        AttnKind::DotProduct => dp_factorized_msa(&mut g, &ctx, &params[0], &bound, seq, heads, None),
        AttnKind::PlaneSequential(o) => {
            let p = PlaneAxisParams::Sequential { plane: params[0], axis: params[1] };
            plane_axis_msa(&mut g, &ctx, &p, &bound, seq, o, heads, None)
        }
        AttnKind::PlaneSplit(o) => plane_axis_msa(&mut g, &ctx, &PlaneAxisParams::Split(params[0]), &bound, seq, o, heads, None),
    }
    .unwrap();
    let got = g.value(out.tokens).to_f64();
    let rec = rec.unwrap();

    let dense: Vec<DenseMsa> = names.iter().map(|p| DenseMsa::from_store(&store, p)).collect();
    let plan: Vec<Vec<(usize, Mask)>> = match kind {
        AttnKind::Vanilla => vec![vec![(heads, Mask::Full)]],
        AttnKind::Axile => (0..3).map(|a| vec![(heads, Mask::Axis(a))]).collect(),
        AttnKind::DotProduct => vec![(0..3).map(|a| (heads / 3, Mask::Axis(a))).collect()],
        AttnKind::PlaneSequential(o) => vec![vec![(heads, Mask::Plane(o))], vec![(heads, Mask::Axis(o))]],
        AttnKind::PlaneSplit(o) => vec![vec![(heads / 2, Mask::Plane(o)), (heads / 2, Mask::Axis(o))]],
    };
    let mut err: f64 = 0.0;
    for b in 0..batch {
        let mut h = x[b * n * d..(b + 1) * n * d].to_vec();
        for (s, groups) in plan.iter().enumerate() {
            let (next, probs) = dense[s].stage(&h, &pos, heads, groups);
            let m = &rec[s][b];
            for (a, e) in m.data.iter().zip(&probs) {
                err = err.max((a - e).abs());
            }
            h = next;
        }
        for (a, e) in got[b * n * d..(b + 1) * n * d].iter().zip(&h) {
            err = err.max((a - e).abs());
        }
    }
    err
}

use minit::models::{Model, ModelConfig, Variant};
use minit::tensor::Var;
use minit::tokenizer::Volume;
use minit::transformer::{EncoderConfig, Flavor};

/// Tape gradient of `Σ op(inputs) ⊙ R` against central differences, for
/// random inputs of the given shapes and a fixed random `R`. Returns the
/// worst relative error over all inputs.
pub fn op_gradient_error(shapes: &[&[usize]], seed: u64, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> =
        shapes.iter().map(|s| (0..s.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let weights_seed = seed.wrapping_add(1000);
    let eval = |xs: &[Vec<f64>], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = xs.iter().zip(shapes).map(|(x, s)| g.param(Tensor::from_f64(s, x).unwrap())).collect();
        let out = build(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let mut wr = ChaCha8Rng::seed_from_u64(weights_seed);
        let r: Vec<f64> = (0..shape.iter().product::<usize>()).map(|_| wr.random_range(-1.0..1.0)).collect();
        let rv = g.constant(Tensor::from_f64(&shape, &r).unwrap());
        let prod = g.mul(out, rv).unwrap();
        let loss = g.sum(prod);
        let l = g.value(loss).data()[0];
        if !grads {
            return (l, Vec::new());
        }
        g.backward(loss).unwrap();
        (l, vars.iter().map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()])).collect())
    };
    let (_, analytic) = eval(&xs, true);
    let mut worst: f64 = 0.0;
    for i in 0..xs.len() {
        let numeric = central_difference(&xs[i], 1e-5, |p| {
            let mut ys = xs.clone();
            ys[i] = p.to_vec();
            eval(&ys, false).0
        });
        worst = worst.max(max_rel_err(&analytic[i], &numeric, 1e-4));
    }
    worst
}

/// Every tape primitive, each checked at f64.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    use minit::tokenizer::RotaryTable;
    let mut out = Vec::new();
    out.push(("add (broadcast)", op_gradient_error(&[&[2, 3, 4], &[4]], 1, |g, v| g.add(v[0], v[1]).unwrap())));
    out.push(("add (inner map)", op_gradient_error(&[&[2, 3, 4], &[3, 1]], 2, |g, v| g.add(v[0], v[1]).unwrap())));
    out.push(("sub", op_gradient_error(&[&[3, 4], &[1, 4]], 3, |g, v| g.sub(v[0], v[1]).unwrap())));
    out.push(("mul", op_gradient_error(&[&[2, 3, 4], &[2, 1, 4]], 4, |g, v| g.mul(v[0], v[1]).unwrap())));
    out.push(("scale", op_gradient_error(&[&[5]], 5, |g, v| g.scale(v[0], -1.7))));
    out.push(("matmul", op_gradient_error(&[&[3, 4], &[4, 2]], 6, |g, v| g.matmul(v[0], v[1]).unwrap())));
    out.push(("matmul (batched)", op_gradient_error(&[&[2, 3, 3, 4], &[3, 4, 2]], 7, |g, v| g.matmul(v[0], v[1]).unwrap())));
    out.push(("softmax", op_gradient_error(&[&[3, 5]], 8, |g, v| g.softmax(v[0], 1).unwrap())));
    out.push(("softmax (inner axis)", op_gradient_error(&[&[3, 4, 2]], 9, |g, v| g.softmax(v[0], 1).unwrap())));
    out.push(("log_softmax", op_gradient_error(&[&[2, 5]], 10, |g, v| g.log_softmax(v[0], 1).unwrap())));
    out.push((
        "layer_norm",
        op_gradient_error(&[&[3, 6], &[6], &[6]], 11, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
    ));
    out.push(("gelu", op_gradient_error(&[&[7]], 12, |g, v| g.gelu(v[0]))));
    out.push((
        "dropout",
        op_gradient_error(&[&[20]], 13, |g, v| g.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()),
    ));
    out.push(("reshape", op_gradient_error(&[&[2, 6]], 14, |g, v| g.reshape(v[0], &[3, 4]).unwrap())));
    out.push(("permute", op_gradient_error(&[&[2, 3, 4]], 15, |g, v| g.permute(v[0], &[2, 0, 1]).unwrap())));
    out.push(("concat", op_gradient_error(&[&[2, 3], &[2, 2]], 16, |g, v| g.concat(&[v[0], v[1]], 1).unwrap())));
    out.push(("narrow", op_gradient_error(&[&[4, 5]], 17, |g, v| g.narrow(v[0], 1, 1, 3).unwrap())));
    out.push(("broadcast_to", op_gradient_error(&[&[1, 3]], 18, |g, v| g.broadcast_to(v[0], &[4, 3]).unwrap())));
    out.push(("sum", op_gradient_error(&[&[3, 3]], 19, |g, v| g.sum(v[0]))));
    out.push(("mean_axis", op_gradient_error(&[&[2, 3, 4]], 20, |g, v| g.mean_axis(v[0], 1).unwrap())));
    let coords: Vec<Option<[usize; 3]>> = vec![None, Some([0, 1, 2]), Some([2, 0, 1])];
    let table = RotaryTable::<f64>::new(&coords, 6).unwrap();
    out.push((
        "rotary",
        op_gradient_error(&[&[2, 3, 2, 6]], 21, move |g, v| g.rotary(v[0], table.cos.clone(), table.sin.clone()).unwrap()),
    ));
    out
}

fn small_encoder(flavor: Flavor, heads: usize, rotary: bool) -> EncoderConfig {
    EncoderConfig { layers: 2, heads, dim: 12, mlp_dim: 10, flavor, dropout: 0.0, rotary }
}

/// Desk-scale configurations covering every variant and attention flavor.
pub fn gradcheck_configs() -> Vec<(&'static str, ModelConfig)> {
    let whole = |variant, e| ModelConfig { variant, encoder: e, input: [8; 3], block_edge: 4, patch_edge: None, classes: 2 };
    let mil = |variant, e| ModelConfig { variant, encoder: e, input: [8; 3], block_edge: 4, patch_edge: Some(2), classes: 2 };
    vec![
        ("nit vanilla", whole(Variant::Nit, small_encoder(Flavor::Vanilla, 2, false))),
        ("nit vanilla rotary", whole(Variant::Nit, small_encoder(Flavor::Vanilla, 2, true))),
        ("nit axile", whole(Variant::Nit, small_encoder(Flavor::Axile, 2, false))),
        ("nit dot-product", whole(Variant::Nit, small_encoder(Flavor::DotProduct, 3, false))),
        ("mvnit axile", whole(Variant::Mvnit, small_encoder(Flavor::Axile, 2, false))),
        ("mvnit dot-product", whole(Variant::Mvnit, small_encoder(Flavor::DotProduct, 2, false))),
        ("minit", mil(Variant::Minit, small_encoder(Flavor::Vanilla, 2, false))),
        ("minit axile", mil(Variant::Minit, small_encoder(Flavor::Axile, 2, false))),
        ("mignit", mil(Variant::Mignit, small_encoder(Flavor::Vanilla, 2, false))),
    ]
}

pub fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(dims, |_, _, _| rng.random::<f32>())
}

/// Loss gradient of a whole model against central differences over up to
/// `budget` parameter scalars spread across every tensor.
pub fn model_gradient_error(cfg: ModelConfig, seed: u64, budget: usize) -> f64 {
    let mut model = Model::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
    randomize(&mut model.params, 0.3, &mut rng);
    let v = random_volume(cfg.input, seed);
    let target = [0.3, 0.7];
    let (_, grads) = model.loss_and_grads(&v, &target, &mut Ctx::eval()).unwrap();
    let total = model.scalar_count();
    let flat: Vec<(usize, usize)> =
        model.params.tensors().iter().enumerate().flat_map(|(t, x)| (0..x.len()).map(move |j| (t, j))).collect();
    let stride = (total / budget.min(total)).max(1);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for &(t, j) in flat.iter().step_by(stride) {
        let eval = |delta: f64| {
            let mut p = model.params.clone();
            p.tensors_mut()[t].data_mut()[j] += delta;
            model.loss_and_grads_at(&p, &v, &target, &mut Ctx::eval()).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(grads[t][j], numeric, 1e-4));
    }
    worst
}

/// Splits `n` synthetic sources, augments only the training part, and
/// reports a train copy whose source landed in val or test.
pub fn leakage_scan(n: usize, factor: usize, seed: u64) -> Result<(), String> {
    use minit::data::{split_by_source, split_indices, SplitSpec};
    let spec = SplitSpec { seed, ..Default::default() };
    let (tr, va, te) = split_indices(n, &spec).map_err(|e| e.to_string())?;
    // copies carry their source index, the same layout augment_offline produces
    let sources: Vec<usize> = tr.iter().flat_map(|&s| std::iter::repeat_n(s, factor)).collect();
    if let Some(s) = sources.iter().find(|s| va.contains(s) || te.contains(s)) {
        return Err(format!("seed {seed}: source {s} of a train copy is held out"));
    }
    let aug_first: Vec<usize> = (0..n).flat_map(|s| std::iter::repeat_n(s, factor)).collect();
    let (a, b, c) = split_by_source(&aug_first, &spec).map_err(|e| e.to_string())?;
    let src = |v: &[usize]| v.iter().map(|&i| aug_first[i]).collect::<std::collections::HashSet<_>>();
    let (sa, sb, sc) = (src(&a), src(&b), src(&c));
    if !sa.is_disjoint(&sb) || !sa.is_disjoint(&sc) || !sb.is_disjoint(&sc) {
        return Err(format!("seed {seed}: a source spans two splits"));
    }
    if a.len() + b.len() + c.len() != n * factor {
        return Err(format!("seed {seed}: split lost items"));
    }
    Ok(())
}

/// Runs the `minit` binary in `dir`; returns (exit code, stdout, stderr).
pub fn minit_cli(dir: &std::path::Path, args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_minit")).current_dir(dir).args(args).output().expect("spawn minit");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// A tiny MINiT run configuration at 8³ writing its data under `data`.
pub fn tiny_config(per_class: usize, epochs: usize) -> String {
    format!(
        "seed = 5\nworkers = 1\nmodel.variant = minit\nmodel.input = 8\nmodel.block_edge = 4\nmodel.patch_edge = 2\n\
         model.layers = 1\nmodel.heads = 2\nmodel.dim = 8\nmodel.mlp_dim = 8\ndata.edge = 8\ndata.per_class = {per_class}\n\
         data.dir = data\naug.swap_edge = 4\ntrain.epochs = {epochs}\ntrain.warmup_epochs = {}\ntrain.batch_size = 4\n",
        usize::from(epochs > 1)
    )
}
