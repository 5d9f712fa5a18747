mod common;

use common::{attention_oracle_error, ALL_KINDS};

const TOL: f64 = 1e-5;

#[test]
fn every_flavor_matches_masked_dense_attention() {
    for kind in ALL_KINDS {
        for seed in 0..50 {
            let e = attention_oracle_error(kind, seed);
            assert!(e < TOL, "{kind:?} seed {seed}: error {e:.3e}");
        }
    }
}

#[test]
fn mismatched_heads_rejected() {
    use minit::transformer::{EncoderConfig, Flavor};
    let cfg = EncoderConfig { layers: 1, heads: 4, dim: 12, mlp_dim: 8, flavor: Flavor::DotProduct, dropout: 0.0, rotary: false };
    assert!(cfg.validate().is_err());
}
