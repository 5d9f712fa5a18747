use rand::Rng;

use super::attention::{axile_msa, dp_factorized_msa, msa, plane_axis_msa, MsaParams, PlaneAxisParams};
use super::{AttentionMatrix, AttentionRecord, Ctx, EncoderConfig, Flavor, INIT_STD};
use crate::error::Result;
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Real, Var};
use crate::tokenizer::{RotaryTable, TokenSequence};

pub const LN_EPS: f64 = 1e-5;

/// Gated MLP: `(gelu(x·W₁ + b₁) ⊙ (x·W₂ + b₂))·W₃ + b₃`.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl MlpParams {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        MlpParams {
            w1: store.trunc_normal(format!("{prefix}.gate.weight"), &[dim, hidden], INIT_STD, rng),
            b1: store.zeros(format!("{prefix}.gate.bias"), &[hidden]),
            w2: store.trunc_normal(format!("{prefix}.value.weight"), &[dim, hidden], INIT_STD, rng),
            b2: store.zeros(format!("{prefix}.value.bias"), &[hidden]),
            w3: store.trunc_normal(format!("{prefix}.out.weight"), &[hidden, dim], INIT_STD, rng),
            b3: store.zeros(format!("{prefix}.out.bias"), &[dim]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AttnParams {
    Vanilla(MsaParams),
    Axile([MsaParams; 3]),
    DotProduct(MsaParams),
    PlaneAxis { params: PlaneAxisParams, orth_axis: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub ln1: (ParamId, ParamId),
    pub attn: AttnParams,
    pub ln2: (ParamId, ParamId),
    pub mlp: MlpParams,
}

/// Parameter handles for an `L`-layer encoder and its final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub layers: Vec<LayerParams>,
    pub final_ln: (ParamId, ParamId),
}

fn layer_norm_params<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> (ParamId, ParamId) {
    (store.ones(format!("{prefix}.gain"), &[dim]), store.zeros(format!("{prefix}.bias"), &[dim]))
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            let ln1 = layer_norm_params(store, &format!("{p}.attn_norm"), d);
            let attn = match cfg.flavor {
                Flavor::Vanilla => AttnParams::Vanilla(MsaParams::new(store, &format!("{p}.attn"), d, rng)),
                Flavor::DotProduct => AttnParams::DotProduct(MsaParams::new(store, &format!("{p}.attn"), d, rng)),
                Flavor::Axile => AttnParams::Axile([
                    MsaParams::new(store, &format!("{p}.attn_x"), d, rng),
                    MsaParams::new(store, &format!("{p}.attn_y"), d, rng),
                    MsaParams::new(store, &format!("{p}.attn_z"), d, rng),
                ]),
                Flavor::PlaneAxis { plane, dot_product } => {
                    let params = if dot_product {
                        PlaneAxisParams::Split(MsaParams::new(store, &format!("{p}.attn"), d, rng))
                    } else {
                        PlaneAxisParams::Sequential {
                            plane: MsaParams::new(store, &format!("{p}.attn_plane"), d, rng),
                            axis: MsaParams::new(store, &format!("{p}.attn_axis"), d, rng),
                        }
                    };
                    AttnParams::PlaneAxis { params, orth_axis: plane.orthogonal_axis() }
                }
            };
            let ln2 = layer_norm_params(store, &format!("{p}.mlp_norm"), d);
            let mlp = MlpParams::new(store, &format!("{p}.mlp"), d, cfg.mlp_dim, rng);
            layers.push(LayerParams { ln1, attn, ln2, mlp });
        }
        let final_ln = layer_norm_params(store, &format!("{prefix}.final_norm"), d);
        Ok(Encoder { cfg, layers, final_ln })
    }
}

pub fn geglu_mlp<T: Real>(g: &mut Graph<T>, p: &MlpParams, bound: &Bound, x: Var) -> Result<Var> {
    let a = g.matmul(x, bound[p.w1])?;
    let a = g.add(a, bound[p.b1])?;
    let a = g.gelu(a);
    let b = g.matmul(x, bound[p.w2])?;
    let b = g.add(b, bound[p.b2])?;
    let h = g.mul(a, b)?;
    let o = g.matmul(h, bound[p.w3])?;
    g.add(o, bound[p.b3])
}

fn attention<T: Real>(
    g: &mut Graph<T>,
    ctx: &Ctx,
    attn: &AttnParams,
    heads: usize,
    bound: &Bound,
    seq: TokenSequence,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<Vec<Vec<AttentionMatrix>>>)> {
    match attn {
        AttnParams::Vanilla(p) => msa(g, ctx, p, bound, seq, heads, rotary),
        AttnParams::Axile(ps) => axile_msa(g, ctx, ps, bound, seq, heads, rotary),
        AttnParams::DotProduct(p) => dp_factorized_msa(g, ctx, p, bound, seq, heads, rotary),
        AttnParams::PlaneAxis { params, orth_axis } => plane_axis_msa(g, ctx, params, bound, seq, *orth_axis, heads, rotary),
    }
}

/// `x ← x + drop(Attn(LN(x)))`, then `x ← x + drop(MLP(LN(x)))`.
///
/// Returns attention matrices as `[stage][sample]` when recording.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer<T: Real>(
    g: &mut Graph<T>,
    ctx: &mut Ctx,
    layer: &LayerParams,
    cfg: &EncoderConfig,
    bound: &Bound,
    seq: TokenSequence,
    rotary: Option<&RotaryTable<T>>,
) -> Result<(TokenSequence, Option<Vec<Vec<AttentionMatrix>>>)> {
    let x = seq.tokens;
    let h = g.layer_norm(x, bound[layer.ln1.0], bound[layer.ln1.1], LN_EPS)?;
    let (a, rec) = attention(g, ctx, &layer.attn, cfg.heads, bound, TokenSequence { tokens: h, ..seq }, rotary)?;
    let a = g.dropout(a.tokens, cfg.dropout, ctx.training, &mut ctx.rng)?;
    let x = g.add(x, a)?;
    let h = g.layer_norm(x, bound[layer.ln2.0], bound[layer.ln2.1], LN_EPS)?;
    let m = geglu_mlp(g, &layer.mlp, bound, h)?;
    let m = g.dropout(m, cfg.dropout, ctx.training, &mut ctx.rng)?;
    let x = g.add(x, m)?;
    Ok((TokenSequence { tokens: x, ..seq }, rec))
}

/// Full stack plus the final layer norm. Records come back one per sample.
pub fn encode<T: Real>(
    g: &mut Graph<T>,
    ctx: &mut Ctx,
    enc: &Encoder,
    bound: &Bound,
    seq: TokenSequence,
) -> Result<(TokenSequence, Option<Vec<AttentionRecord>>)> {
    let batch = g.shape(seq.tokens)[0];
    let rotary = if enc.cfg.rotary { Some(RotaryTable::new(&seq.coords(), enc.cfg.head_dim())?) } else { None };
    let mut records: Option<Vec<AttentionRecord>> = ctx.record.then(|| {
        (0..batch).map(|_| AttentionRecord { layers: Vec::new(), has_class_token: seq.has_class_token }).collect()
    });
    let mut cur = seq;
    for layer in &enc.layers {
        let (next, rec) = encoder_layer(g, ctx, layer, &enc.cfg, bound, cur, rotary.as_ref())?;
        if let (Some(all), Some(stages)) = (records.as_mut(), rec) {
            for (b, r) in all.iter_mut().enumerate() {
                r.layers.push(stages.iter().map(|s| s[b].clone()).collect());
            }
        }
        cur = next;
    }
    let out = g.layer_norm(cur.tokens, bound[enc.final_ln.0], bound[enc.final_ln.1], LN_EPS)?;
    Ok((TokenSequence { tokens: out, ..cur }, records))
}
