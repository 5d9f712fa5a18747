mod common;

use common::{randomize, random_volume};
use minit::models::{param_count, preset, published_presets, Model, ModelConfig, Variant};
use minit::tensor::Graph;
use minit::tokenizer::{assemble_blocks, extract_blocks, Volume};
use minit::transformer::{Ctx, EncoderConfig, Flavor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Values {
    logits: Vec<f64>,
    head_input: Vec<f64>,
    per_block: Option<Vec<f64>>,
}

fn run(m: &Model<f64>, v: &Volume) -> Values {
    let mut g = Graph::new();
    let bound = m.params.bind_frozen(&mut g);
    let out = m.forward(&mut g, &bound, v, &mut Ctx::eval()).unwrap();
    Values {
        logits: g.value(out.logits).to_f64(),
        head_input: g.value(out.head_input).to_f64(),
        per_block: out.per_block.map(|p| g.value(p).to_f64()),
    }
}

fn enc(flavor: Flavor) -> EncoderConfig {
    EncoderConfig { layers: 1, heads: 2, dim: 8, mlp_dim: 8, flavor, dropout: 0.0, rotary: false }
}

fn cfg(variant: Variant, flavor: Flavor) -> ModelConfig {
    let patch_edge = variant.is_multiple_instance().then_some(2);
    ModelConfig { variant, encoder: enc(flavor), input: [8; 3], block_edge: 4, patch_edge, classes: 2 }
}

fn random_model(c: ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::new(c, seed).unwrap();
    randomize(&mut m.params, 0.4, &mut ChaCha8Rng::seed_from_u64(seed));
    m
}

fn zero_param(m: &mut Model<f64>, name: &str) {
    let id = m.params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    m.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
}

#[test]
fn nit_shape_contract() {
    let m = random_model(cfg(Variant::Nit, Flavor::Vanilla), 1);
    let out = run(&m, &random_volume([8; 3], 2));
    assert_eq!(out.logits.len(), 2);
    assert!(out.logits.iter().all(|x| x.is_finite()));
}

#[test]
fn zero_input_path_gives_constant_logits() {
    for (variant, flavor) in [
        (Variant::Nit, Flavor::Vanilla),
        (Variant::Nit, Flavor::Axile),
        (Variant::Mvnit, Flavor::DotProduct),
        (Variant::Minit, Flavor::Vanilla),
        (Variant::Mignit, Flavor::Vanilla),
    ] {
        let mut m = random_model(cfg(variant, flavor), 3);
        zero_param(&mut m, "embed.weight");
        let a = Volume::from_fn([8; 3], |x, y, z| ((x + 2 * y + 3 * z) % 5) as f32 / 5.0);
        let b = Volume::from_fn([8; 3], |x, y, z| ((x * y + z) % 7) as f32 / 7.0);
        assert_eq!(run(&m, &a).logits, run(&m, &b).logits, "{variant:?} {flavor:?}");
    }
}

#[test]
fn mvnit_zero_projection_gives_bias() {
    let mut m = random_model(cfg(Variant::Mvnit, Flavor::Axile), 4);
    zero_param(&mut m, "head.weight");
    let bias = m.params.get(m.params.by_name("head.bias").unwrap()).to_f64();
    let out = run(&m, &random_volume([8; 3], 5));
    assert_eq!(out.logits, bias);
    assert_eq!(out.head_input.len(), 3 * 8);
}

#[test]
fn mvnit_tied_views_agree_on_symmetric_input() {
    for flavor in [Flavor::Axile, Flavor::DotProduct] {
        let mut m = random_model(cfg(Variant::Mvnit, flavor), 6);
        zero_param(&mut m, "embed.position");
        let names: Vec<String> = m.params.names().to_vec();
        for name in names.iter().filter(|n| n.starts_with("view_transverse.")) {
            let src = m.params.get(m.params.by_name(name).unwrap()).clone();
            for view in ["view_coronal.", "view_sagittal."] {
                let id = m.params.by_name(&name.replacen("view_transverse.", view, 1)).unwrap();
                *m.params.get_mut(id) = src.clone();
            }
        }
        // constant inside each block, symmetric in the block coordinates
        let h = |a: usize, b: usize, c: usize| ((a + b + c) as f32 * 0.3 + (a * b * c) as f32 * 0.2).sin().abs();
        let v = Volume::from_fn([8; 3], |x, y, z| h(x / 4, y / 4, z / 4));
        let out = run(&m, &v);
        let (t, rest) = out.head_input.split_at(8);
        let (c, s) = rest.split_at(8);
        for (a, b) in t.iter().zip(c).chain(t.iter().zip(s)) {
            assert!((a - b).abs() < 1e-10, "{flavor:?}: {a} vs {b}");
        }
    }
}

#[test]
fn minit_block_processing_is_shared() {
    let c = cfg(Variant::Minit, Flavor::Vanilla);
    let m = random_model(c, 7);
    let v = random_volume([8; 3], 8);
    let perm = [3usize, 0, 7, 5, 1, 6, 2, 4];
    let blocks = extract_blocks(&v, 4).unwrap();
    let mut moved = blocks.clone();
    for (i, &p) in perm.iter().enumerate() {
        let n = blocks.block_len();
        moved.data[i * n..(i + 1) * n].copy_from_slice(blocks.block(p));
    }
    let mut pm = m.clone();
    let id = pm.params.by_name("embed.block").unwrap();
    let table = m.params.get(id).to_f64();
    let d = c.encoder.dim;
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..d {
            pm.params.get_mut(id).data_mut()[i * d + k] = table[p * d + k];
        }
    }
    let base = run(&m, &v).per_block.unwrap();
    let permuted = run(&pm, &assemble_blocks(&moved)).per_block.unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..2 {
            assert!((permuted[i * 2 + k] - base[p * 2 + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn minit_block_embedding_separates_identical_blocks() {
    let m = random_model(cfg(Variant::Minit, Flavor::Vanilla), 9);
    let pb = run(&m, &Volume::from_fn([8; 3], |_, _, _| 0.5)).per_block.unwrap();
    let rows: Vec<&[f64]> = pb.chunks(2).collect();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            assert_ne!(rows[i], rows[j], "blocks {i} and {j}");
        }
    }
}

#[test]
fn mignit_global_sequence_and_zero_global_encoder() {
    let c = cfg(Variant::Mignit, Flavor::Vanilla);
    let mut m = random_model(c, 10);
    let (_, rec) = m.predict_recorded(&random_volume([8; 3], 11)).unwrap();
    assert_eq!(rec.global.unwrap().tokens(), Some(c.n_blocks() + 1));
    let names: Vec<String> = m.params.names().to_vec();
    for n in names.iter().filter(|n| n.starts_with("global.") && !n.ends_with("class_token") && !n.ends_with(".gain")) {
        zero_param(&mut m, n);
    }
    let a = run(&m, &random_volume([8; 3], 12)).logits;
    let b = run(&m, &random_volume([8; 3], 13)).logits;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn minit_preset_geometry_at_full_scale() {
    let p = preset("minit").unwrap();
    let e = p.model.encoder;
    assert_eq!((e.layers, e.heads, e.dim, e.mlp_dim, p.lr, p.weight_decay), (6, 8, 256, 309, 1e-4, 0.125));
    assert_eq!(p.model.n_blocks(), 64);
    assert_eq!(p.model.tokenizer().patches_per_block(), Some(64));
    let mut small = p.model;
    small.encoder = EncoderConfig { layers: 1, heads: 2, dim: 8, mlp_dim: 8, ..e };
    small.encoder.dropout = 0.0;
    let m = Model::<f64>::new(small, 0).unwrap();
    let out = run(&m, &random_volume([64; 3], 1));
    assert_eq!(out.per_block.unwrap().len(), 64 * 2);
    assert_eq!(out.head_input.len(), 128);
}

#[test]
fn param_count_matches_instantiation_for_published_presets() {
    for p in published_presets() {
        let m = Model::<f32>::new(p.model, 0).unwrap();
        assert_eq!(param_count(&p.model), m.scalar_count(), "{}", p.name);
    }
}

#[test]
fn single_head_closed_form() {
    let mut c = cfg(Variant::Nit, Flavor::Vanilla);
    c.encoder.dim = 256;
    c.encoder.heads = 8;
    let m = Model::<f32>::new(c, 0).unwrap();
    assert_eq!(m.params.get(m.params.by_name("head.weight").unwrap()).len() + 2, 514);
}
