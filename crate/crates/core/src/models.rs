//! The four architectures and their named presets.
//!
//! * NiT: blocks → linear embedding → positions → class token → encoder → head.
//! * MVNiT: one tokenization feeding three plane/axis encoders whose pooled
//!   embeddings are concatenated and projected.
//! * MINiT: every block is a bag of patches run through one weight-shared
//!   NiT; per-block logits are concatenated and projected.
//! * MiGNiT: as MINiT up to the per-block class embeddings, which then pass
//!   through a second, global encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::tensor::{Bound, Graph, Grads, ParamId, ParamStore, Real, Var};
use crate::tokenizer::{
    add_block_embeddings, add_positional, blocks_input, extract_block_patches, extract_blocks, linear_embed,
    prepend_class_token, TokenSequence, TokenizerConfig, Volume,
};
use crate::transformer::{encode, AttentionRecord, Ctx, Encoder, EncoderConfig, Flavor, Plane, INIT_STD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nit,
    Mvnit,
    Minit,
    Mignit,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nit => "nit",
            Variant::Mvnit => "mvnit",
            Variant::Minit => "minit",
            Variant::Mignit => "mignit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nit" => Ok(Variant::Nit),
            "mvnit" => Ok(Variant::Mvnit),
            "minit" => Ok(Variant::Minit),
            "mignit" => Ok(Variant::Mignit),
            _ => Err(config_err!("unknown model variant {:?}", s)),
        }
    }

    pub fn is_multiple_instance(self) -> bool {
        matches!(self, Variant::Minit | Variant::Mignit)
    }
}

/// Full architectural description.
///
/// For MVNiT, `encoder.flavor` is `Axile` or `DotProduct` and selects the
/// form each plane/axis encoder takes. For the multiple-instance variants,
/// `patch_edge` is required and `block_edge` cuts the bags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub input: [usize; 3],
    pub block_edge: usize,
    pub patch_edge: Option<usize>,
    pub classes: usize,
}

impl ModelConfig {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig { block_edge: self.block_edge, patch_edge: self.patch_edge, embed_dim: self.encoder.dim }
    }

    /// Encoder configuration of the per-view encoder for MVNiT.
    pub fn view_encoder(&self, plane: Plane) -> EncoderConfig {
        EncoderConfig {
            flavor: Flavor::PlaneAxis { plane, dot_product: self.encoder.flavor == Flavor::DotProduct },
            ..self.encoder
        }
    }

    /// MiGNiT's global encoder always attends over all block embeddings.
    pub fn global_encoder(&self) -> EncoderConfig {
        EncoderConfig { flavor: Flavor::Vanilla, ..self.encoder }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.classes));
        }
        if self.variant != Variant::Mvnit {
            self.encoder.validate()?;
        }
        let tok = self.tokenizer();
        tok.validate(self.input)?;
        match self.variant {
            Variant::Minit | Variant::Mignit if self.patch_edge.is_none() => {
                return Err(config_err!("{} needs a patch edge", self.variant.name()))
            }
            Variant::Mvnit => {
                if !matches!(self.encoder.flavor, Flavor::Axile | Flavor::DotProduct) {
                    return Err(config_err!("mvnit needs flavor axile or dot_product"));
                }
                self.view_encoder(Plane::Transverse).validate()?;
            }
            _ => {}
        }
        if let Flavor::PlaneAxis { .. } = self.encoder.flavor {
            if self.variant != Variant::Mvnit {
                return Err(config_err!("plane/axis attention is only used inside mvnit"));
            }
        }
        if self.variant == Variant::Mignit {
            self.global_encoder().validate()?;
        }
        Ok(())
    }

    /// Token grid seen by the (per-block) encoder.
    pub fn token_grid(&self) -> [usize; 3] {
        match self.patch_edge {
            Some(p) if self.variant.is_multiple_instance() => [self.block_edge / p; 3],
            _ => self.tokenizer().block_grid(self.input),
        }
    }

    pub fn block_grid(&self) -> [usize; 3] {
        self.tokenizer().block_grid(self.input)
    }

    pub fn n_blocks(&self) -> usize {
        self.block_grid().iter().product()
    }

    /// Edge of the cubes that become tokens.
    pub fn token_edge(&self) -> usize {
        match self.variant {
            Variant::Minit | Variant::Mignit => self.patch_edge.unwrap_or(self.block_edge),
            _ => self.block_edge,
        }
    }

    /// Whether the (per-block) encoder keeps a class token.
    pub fn has_class_token(&self) -> bool {
        self.variant != Variant::Mvnit && !self.encoder.flavor.is_factorized()
    }
}

/// Closed-form parameter count, computed without instantiating a model.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.encoder.dim;
    let c = cfg.classes;
    let msa = 4 * (d * d + d);
    let layer = |flavor: Flavor| {
        let stages = match flavor {
            Flavor::Axile => 3,
            Flavor::PlaneAxis { dot_product: false, .. } => 2,
            _ => 1,
        };
        4 * d + stages * msa + 2 * (d * cfg.encoder.mlp_dim + cfg.encoder.mlp_dim) + cfg.encoder.mlp_dim * d + d
    };
    let encoder = |flavor: Flavor| cfg.encoder.layers * layer(flavor) + 2 * d;
    let e = cfg.token_edge().pow(3);
    let n_tokens: usize = cfg.token_grid().iter().product();
    let embed = e * d + d;
    let pos = if cfg.encoder.rotary { 0 } else { n_tokens * d };
    let cls = if cfg.has_class_token() { d } else { 0 };
    match cfg.variant {
        Variant::Nit => embed + pos + cls + encoder(cfg.encoder.flavor) + d * c + c,
        Variant::Mvnit => {
            let views: usize = Plane::ALL.iter().map(|&p| encoder(cfg.view_encoder(p).flavor)).sum();
            embed + pos + views + 3 * d * c + c
        }
        Variant::Minit => {
            let nb = cfg.n_blocks();
            embed + pos + nb * d + cls + encoder(cfg.encoder.flavor) + d * c + c + nb * c * c + c
        }
        Variant::Mignit => {
            let nb = cfg.n_blocks();
            let gpos = if cfg.encoder.rotary { 0 } else { nb * d };
            embed + pos + nb * d + cls + encoder(cfg.encoder.flavor) + gpos + d + encoder(Flavor::Vanilla) + d * c + c
        }
    }
}

#[derive(Debug, Clone)]
struct Embedding {
    w: ParamId,
    b: ParamId,
    pos: Option<ParamId>,
    cls: Option<ParamId>,
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: store.trunc_normal(format!("{name}.weight"), &[i, o], INIT_STD, rng),
            b: store.zeros(format!("{name}.bias"), &[o]),
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, bound[self.w])?;
        g.add(y, bound[self.b])
    }
}

#[derive(Debug, Clone)]
enum Parts {
    Nit { embed: Embedding, encoder: Encoder, head: Linear },
    Mvnit { embed: Embedding, views: Vec<Encoder>, head: Linear },
    Minit { embed: Embedding, block_table: ParamId, encoder: Encoder, block_head: Linear, head: Linear },
    Mignit { embed: Embedding, block_table: ParamId, encoder: Encoder, global_pos: Option<ParamId>, global_cls: ParamId, global: Encoder, head: Linear },
}

/// Attention captured during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardRecords {
    /// NiT: one entry; MVNiT: transverse, coronal, sagittal.
    pub views: Vec<AttentionRecord>,
    /// Multiple-instance variants: one entry per block, lexicographic.
    pub blocks: Vec<AttentionRecord>,
    /// MiGNiT global encoder over block embeddings.
    pub global: Option<AttentionRecord>,
}

#[derive(Debug, Clone)]
pub struct Output {
    /// `[C]`
    pub logits: Var,
    /// Whatever the final projection reads.
    pub head_input: Var,
    /// MINiT per-block logits `[n_blocks, C]`; MiGNiT per-block embeddings `[n_blocks, D]`.
    pub per_block: Option<Var>,
    pub records: Option<ForwardRecords>,
}

/// Configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    parts: Parts,
}

fn embedding<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Embedding {
    let d = cfg.encoder.dim;
    let e = cfg.token_edge().pow(3);
    let n: usize = cfg.token_grid().iter().product();
    Embedding {
        w: store.trunc_normal("embed.weight", &[e, d], INIT_STD, rng),
        b: store.zeros("embed.bias", &[d]),
        pos: (!cfg.encoder.rotary).then(|| store.trunc_normal("embed.position", &[n, d], INIT_STD, rng)),
        cls: cfg.has_class_token().then(|| store.trunc_normal("embed.class_token", &[d], INIT_STD, rng)),
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.encoder.dim;
        let c = config.classes;
        let parts = match config.variant {
            Variant::Nit => {
                let embed = embedding(&mut s, &config, &mut rng);
                let encoder = Encoder::new(&mut s, "encoder", config.encoder, &mut rng)?;
                let head = Linear::new(&mut s, "head", d, c, &mut rng);
                Parts::Nit { embed, encoder, head }
            }
            Variant::Mvnit => {
                let embed = embedding(&mut s, &config, &mut rng);
                let views = Plane::ALL
                    .iter()
                    .map(|&p| Encoder::new(&mut s, &format!("view_{}", p.name()), config.view_encoder(p), &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let head = Linear::new(&mut s, "head", 3 * d, c, &mut rng);
                Parts::Mvnit { embed, views, head }
            }
            Variant::Minit => {
                let embed = embedding(&mut s, &config, &mut rng);
                let block_table = s.trunc_normal("embed.block", &[config.n_blocks(), d], INIT_STD, &mut rng);
                let encoder = Encoder::new(&mut s, "encoder", config.encoder, &mut rng)?;
                let block_head = Linear::new(&mut s, "block_head", d, c, &mut rng);
                let head = Linear::new(&mut s, "head", config.n_blocks() * c, c, &mut rng);
                Parts::Minit { embed, block_table, encoder, block_head, head }
            }
            Variant::Mignit => {
                let embed = embedding(&mut s, &config, &mut rng);
                let nb = config.n_blocks();
                let block_table = s.trunc_normal("embed.block", &[nb, d], INIT_STD, &mut rng);
                let encoder = Encoder::new(&mut s, "encoder", config.encoder, &mut rng)?;
                let global_pos = (!config.encoder.rotary).then(|| s.trunc_normal("global.position", &[nb, d], INIT_STD, &mut rng));
                let global_cls = s.trunc_normal("global.class_token", &[d], INIT_STD, &mut rng);
                let global = Encoder::new(&mut s, "global", config.global_encoder(), &mut rng)?;
                let head = Linear::new(&mut s, "head", d, c, &mut rng);
                Parts::Mignit { embed, block_table, encoder, global_pos, global_cls, global, head }
            }
        };
        Ok(Model { config, params: s, parts })
    }

    /// Same architecture with parameters loaded from `params`; names and
    /// shapes must match exactly.
    pub fn with_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        let want = crate::tensor::manifest(&m.params);
        let got = crate::tensor::manifest(&params);
        if want != got {
            return Err(dim_err!("{}", manifest_diff(&want, &got)));
        }
        m.params = params;
        Ok(m)
    }

    fn tokens(&self, g: &mut Graph<T>, bound: &Bound, embed: &Embedding, v: &Volume) -> Result<TokenSequence> {
        let cfg = &self.config;
        let seq = if cfg.variant.is_multiple_instance() {
            let (_, patches) = extract_block_patches(v, cfg.block_edge, cfg.patch_edge.unwrap())?;
            let refs: Vec<_> = patches.iter().collect();
            let x = blocks_input(g, &refs)?;
            linear_embed(g, x, patches[0].grid, bound[embed.w], bound[embed.b])?
        } else {
            let blocks = extract_blocks(v, cfg.block_edge)?;
            let x = blocks_input(g, &[&blocks])?;
            linear_embed(g, x, blocks.grid, bound[embed.w], bound[embed.b])?
        };
        match embed.pos {
            Some(p) => add_positional(g, seq, bound[p]),
            None => Ok(seq),
        }
    }

    /// `[S, n, D]` → `[S, D]` by class token or token mean.
    fn pool(g: &mut Graph<T>, seq: &TokenSequence) -> Result<Var> {
        let s = g.shape(seq.tokens).to_vec();
        if seq.has_class_token {
            let t = g.narrow(seq.tokens, 1, 0, 1)?;
            g.reshape(t, &[s[0], s[2]])
        } else {
            g.mean_axis(seq.tokens, 1)
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, v: &Volume, ctx: &mut Ctx) -> Result<Output> {
        let cfg = &self.config;
        if v.dims() != cfg.input {
            return Err(dim_err!("model expects a {:?} volume, got {:?}", cfg.input, v.dims()));
        }
        let c = cfg.classes;
        let mut records = ctx.record.then(ForwardRecords::default);
        match &self.parts {
            Parts::Nit { embed, encoder, head } => {
                let mut seq = self.tokens(g, bound, embed, v)?;
                if let Some(cls) = embed.cls {
                    seq = prepend_class_token(g, seq, bound[cls])?;
                }
                let (out, rec) = encode(g, ctx, encoder, bound, seq)?;
                if let (Some(r), Some(mut rec)) = (records.as_mut(), rec) {
                    r.views.push(rec.remove(0));
                }
                let pooled = Self::pool(g, &out)?;
                let logits = head.apply(g, bound, pooled)?;
                let logits = g.reshape(logits, &[c])?;
                Ok(Output { logits, head_input: pooled, per_block: None, records })
            }
            Parts::Mvnit { embed, views, head } => {
                let seq = self.tokens(g, bound, embed, v)?;
                let mut pooled = Vec::with_capacity(3);
                for enc in views {
                    let (out, rec) = encode(g, ctx, enc, bound, seq)?;
                    if let (Some(r), Some(mut rec)) = (records.as_mut(), rec) {
                        r.views.push(rec.remove(0));
                    }
                    pooled.push(Self::pool(g, &out)?);
                }
                let cat = g.concat(&pooled, 1)?;
                let logits = head.apply(g, bound, cat)?;
                let logits = g.reshape(logits, &[c])?;
                Ok(Output { logits, head_input: cat, per_block: None, records })
            }
            Parts::Minit { embed, block_table, encoder, block_head, head } => {
                let mut seq = self.tokens(g, bound, embed, v)?;
                seq = add_block_embeddings(g, seq, bound[*block_table])?;
                if let Some(cls) = embed.cls {
                    seq = prepend_class_token(g, seq, bound[cls])?;
                }
                let (out, rec) = encode(g, ctx, encoder, bound, seq)?;
                if let (Some(r), Some(rec)) = (records.as_mut(), rec) {
                    r.blocks = rec;
                }
                let pooled = Self::pool(g, &out)?;
                let per_block = block_head.apply(g, bound, pooled)?;
                let flat = g.reshape(per_block, &[1, cfg.n_blocks() * c])?;
                let logits = head.apply(g, bound, flat)?;
                let logits = g.reshape(logits, &[c])?;
                Ok(Output { logits, head_input: flat, per_block: Some(per_block), records })
            }
            Parts::Mignit { embed, block_table, encoder, global_pos, global_cls, global, head } => {
                let mut seq = self.tokens(g, bound, embed, v)?;
                seq = add_block_embeddings(g, seq, bound[*block_table])?;
                if let Some(cls) = embed.cls {
                    seq = prepend_class_token(g, seq, bound[cls])?;
                }
                let (out, rec) = encode(g, ctx, encoder, bound, seq)?;
                if let (Some(r), Some(rec)) = (records.as_mut(), rec) {
                    r.blocks = rec;
                }
                let pooled = Self::pool(g, &out)?;
                let d = cfg.encoder.dim;
                let tokens = g.reshape(pooled, &[1, cfg.n_blocks(), d])?;
                let mut gseq = TokenSequence { tokens, grid: cfg.block_grid(), has_class_token: false };
                if let Some(p) = global_pos {
                    gseq = add_positional(g, gseq, bound[*p])?;
                }
                gseq = prepend_class_token(g, gseq, bound[*global_cls])?;
                let (gout, grec) = encode(g, ctx, global, bound, gseq)?;
                if let (Some(r), Some(mut grec)) = (records.as_mut(), grec) {
                    r.global = Some(grec.remove(0));
                }
                let gpooled = Self::pool(g, &gout)?;
                let logits = head.apply(g, bound, gpooled)?;
                let logits = g.reshape(logits, &[c])?;
                Ok(Output { logits, head_input: gpooled, per_block: Some(pooled), records })
            }
        }
    }

    /// Inference without dropout; returns logits.
    pub fn predict(&self, v: &Volume) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &bound, v, &mut Ctx::eval())?;
        Ok(g.value(out.logits).to_f64())
    }

    /// Logits plus captured attention.
    pub fn predict_recorded(&self, v: &Volume) -> Result<(Vec<f64>, ForwardRecords)> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &bound, v, &mut Ctx::recording())?;
        Ok((g.value(out.logits).to_f64(), out.records.unwrap_or_default()))
    }

    /// Soft-target cross-entropy of one sample and its parameter gradients.
    pub fn loss_and_grads(&self, v: &Volume, target: &[f64], ctx: &mut Ctx) -> Result<(f64, Grads<T>)> {
        self.loss_and_grads_at(&self.params, v, target, ctx)
    }

    /// As [`Model::loss_and_grads`], evaluated at another parameter set of
    /// the same architecture.
    pub fn loss_and_grads_at(&self, params: &ParamStore<T>, v: &Volume, target: &[f64], ctx: &mut Ctx) -> Result<(f64, Grads<T>)> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = self.forward(&mut g, &bound, v, ctx)?;
        let loss = crate::training::soft_cross_entropy(&mut g, out.logits, target)?;
        let lv = g.value(loss).data()[0].f64();
        g.backward(loss)?;
        Ok((lv, params.collect_grads(&g, &bound)))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }
}

/// Human-readable difference between two checkpoint manifests.
pub fn manifest_diff(want: &[crate::tensor::ManifestEntry], got: &[crate::tensor::ManifestEntry]) -> String {
    let mut lines = vec!["checkpoint does not match the configured architecture:".to_string()];
    for w in want {
        match got.iter().find(|g| g.name == w.name) {
            None => lines.push(format!("  missing {} {:?}", w.name, w.shape)),
            Some(g) if g.shape != w.shape => lines.push(format!("  {} expected {:?}, found {:?}", w.name, w.shape, g.shape)),
            _ => {}
        }
    }
    for g in got {
        if !want.iter().any(|w| w.name == g.name) {
            lines.push(format!("  unexpected {} {:?}", g.name, g.shape));
        }
    }
    if lines.len() == 1 {
        lines.push("  parameter order differs".into());
    }
    lines.join("\n")
}

/// A named configuration with its training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    /// Trainable parameter count reported alongside the original presets.
    pub published_params: Option<&'static str>,
}

const PUBLISHED_PRESETS: [&str; 9] =
    ["nit-base", "nit-axile", "nit-dp", "mvnit-axile", "mvnit-dp", "mignit", "minit-axile", "minit-dp", "minit"];

/// The nine published presets, in table order.
pub fn published_presets() -> Vec<Preset> {
    PUBLISHED_PRESETS.iter().map(|n| preset(n).unwrap()).collect()
}

pub const PRESET_NAMES: [&str; 11] = [
    "nit-base", "nit-axile", "nit-dp", "mvnit-axile", "mvnit-dp", "mignit", "minit-axile", "minit-dp", "minit", "nit-desk",
    "minit-desk",
];

pub fn preset(name: &str) -> Option<Preset> {
    let enc = |layers, heads, dim, mlp_dim, flavor| EncoderConfig { layers, heads, dim, mlp_dim, flavor, dropout: 0.1, rotary: false };
    let whole = |variant, e| ModelConfig { variant, encoder: e, input: [64; 3], block_edge: 8, patch_edge: None, classes: 2 };
    let mil = |variant, e| ModelConfig { variant, encoder: e, input: [64; 3], block_edge: 16, patch_edge: Some(4), classes: 2 };
    use Flavor::*;
    let (model, lr, wd, published) = match name {
        "nit-base" => (whole(Variant::Nit, enc(4, 8, 256, 234, Vanilla)), 1e-4, 0.16, "1.8M"),
        "nit-axile" => (whole(Variant::Nit, enc(6, 8, 256, 64, Axile)), 1.3e-5, 0.05, "5.1M"),
        // 512 is not divisible by 12 heads; nearest multiple above.
        "nit-dp" => (whole(Variant::Nit, enc(3, 12, 516, 175, DotProduct)), 6.5e-5, 0.25, "4M"),
        "mvnit-axile" => (whole(Variant::Mvnit, enc(6, 8, 512, 209, Axile)), 9e-4, 0.21, "15M"),
        "mvnit-dp" => (whole(Variant::Mvnit, enc(6, 4, 512, 215, DotProduct)), 5e-4, 0.13, "8.9M"),
        "mignit" => (mil(Variant::Mignit, enc(6, 8, 256, 309, Vanilla)), 2e-4, 0.3, "8.5M"),
        "minit-axile" => (mil(Variant::Minit, enc(6, 8, 128, 128, Axile)), 1e-4, 0.01, "3.1M"),
        // Published as 258, which 12 heads do not divide.
        "minit-dp" => (mil(Variant::Minit, enc(6, 12, 264, 128, DotProduct)), 5e-5, 0.24, "3.9M"),
        "minit" => (mil(Variant::Minit, enc(6, 8, 256, 309, Vanilla)), 1e-4, 0.125, "3.6M"),
        "nit-desk" => {
            let mut m = whole(Variant::Nit, enc(2, 4, 64, 128, Vanilla));
            m.input = [32; 3];
            return Some(Preset { name: "nit-desk", model: m, lr: 3e-4, weight_decay: 0.05, published_params: None });
        }
        "minit-desk" => {
            let mut m = mil(Variant::Minit, enc(2, 4, 64, 128, Vanilla));
            m.input = [32; 3];
            m.patch_edge = Some(8);
            return Some(Preset { name: "minit-desk", model: m, lr: 3e-4, weight_decay: 0.05, published_params: None });
        }
        _ => return None,
    };
    let name = PRESET_NAMES.iter().find(|&&n| n == name).copied().unwrap();
    Some(Preset { name, model, lr, weight_decay: wd, published_params: Some(published) })
}

/// Tensor helper for tests and tools: a one-hot C-vector.
pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == class { 1.0 } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant, flavor: Flavor) -> ModelConfig {
        ModelConfig {
            variant,
            encoder: EncoderConfig { layers: 1, heads: if flavor == Flavor::DotProduct { 3 } else { 2 }, dim: 12, mlp_dim: 6, flavor, dropout: 0.0, rotary: false },
            input: [8; 3],
            block_edge: 4,
            patch_edge: variant.is_multiple_instance().then_some(2),
            classes: 2,
        }
    }

    #[test]
    fn closed_form_count_matches_instantiation() {
        for (v, f) in [
            (Variant::Nit, Flavor::Vanilla),
            (Variant::Nit, Flavor::Axile),
            (Variant::Nit, Flavor::DotProduct),
            (Variant::Mvnit, Flavor::Axile),
            (Variant::Minit, Flavor::Vanilla),
            (Variant::Minit, Flavor::Axile),
            (Variant::Mignit, Flavor::Vanilla),
        ] {
            let cfg = tiny(v, f);
            let m = Model::<f32>::new(cfg, 1).unwrap();
            assert_eq!(param_count(&cfg), m.scalar_count(), "{v:?} {f:?}");
        }
    }

    #[test]
    fn shapes_for_each_variant() {
        let v = Volume::from_fn([8; 3], |x, y, z| ((x + 2 * y + 3 * z) % 7) as f32 / 7.0);
        for (var, f) in [(Variant::Nit, Flavor::Vanilla), (Variant::Mvnit, Flavor::DotProduct), (Variant::Minit, Flavor::Vanilla), (Variant::Mignit, Flavor::Vanilla)] {
            let mut cfg = tiny(var, f);
            if var == Variant::Mvnit {
                cfg.encoder.heads = 2;
            }
            let m = Model::<f64>::new(cfg, 3).unwrap();
            let logits = m.predict(&v).unwrap();
            assert_eq!(logits.len(), 2);
            assert!(logits.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn wrong_extent_is_dimension_error() {
        let m = Model::<f32>::new(tiny(Variant::Nit, Flavor::Vanilla), 0).unwrap();
        let err = m.predict(&Volume::zeros([8, 8, 4])).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension(_)));
    }

    #[test]
    fn presets_resolve() {
        let p = preset("minit").unwrap();
        assert_eq!((p.model.encoder.layers, p.model.encoder.heads, p.model.encoder.dim, p.model.encoder.mlp_dim), (6, 8, 256, 309));
        assert_eq!((p.lr, p.weight_decay), (1e-4, 0.125));
        for name in PRESET_NAMES {
            preset(name).unwrap().model.validate().unwrap();
        }
        assert!(preset("vit-huge").is_none());
    }
}
