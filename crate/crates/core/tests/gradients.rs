mod common;

use common::{gradcheck_configs, model_gradient_error, primitive_gradient_errors, random_volume};
use minit::models::Model;
use minit::transformer::Ctx;

const PRIMITIVE_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

#[test]
fn primitives_match_central_differences() {
    for (name, e) in primitive_gradient_errors() {
        assert!(e < PRIMITIVE_TOL, "{name}: relative error {e:.3e}");
    }
}

#[test]
fn every_variant_matches_central_differences() {
    for (name, cfg) in gradcheck_configs() {
        let e = model_gradient_error(cfg, 7, 400);
        assert!(e < MODEL_TOL, "{name}: relative error {e:.3e}");
    }
}

#[test]
fn no_dead_parameters() {
    for (name, cfg) in gradcheck_configs() {
        let m = Model::<f32>::new(cfg, 3).unwrap();
        let (_, g) = m.loss_and_grads(&random_volume(cfg.input, 5), &[1.0, 0.0], &mut Ctx::eval()).unwrap();
        let total: usize = g.iter().map(|t| t.len()).sum();
        let live: usize = g.iter().flatten().filter(|&&x| x != 0.0).count();
        assert!(live as f64 >= 0.99 * total as f64, "{name}: only {live} of {total} gradients nonzero");
    }
}
