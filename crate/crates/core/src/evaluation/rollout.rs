use crate::error::{contract_err, Result};
use crate::models::{ForwardRecords, ModelConfig, Variant};
use crate::tokenizer::{grid_coord, Volume};
use crate::transformer::{AttentionMatrix, AttentionRecord};

const STOCHASTIC_TOL: f64 = 1e-6;

fn check_stochastic(m: &AttentionMatrix, what: &str) -> Result<()> {
    if m.data.len() != m.n * m.n {
        return Err(contract_err!("{what}: {} entries do not form a {}×{} matrix", m.data.len(), m.n, m.n));
    }
    let e = m.stochastic_error();
    if e > STOCHASTIC_TOL {
        return Err(contract_err!("{what}: not row-stochastic (error {e:.3e})"));
    }
    Ok(())
}

/// Product of a layer's stage matrices, later stages on the left.
pub fn layer_matrix(stages: &[AttentionMatrix]) -> Result<AttentionMatrix> {
    let first = stages.first().ok_or_else(|| contract_err!("layer without attention stages"))?;
    let mut m = first.clone();
    check_stochastic(&m, "stage 0")?;
    for (i, s) in stages.iter().enumerate().skip(1) {
        if s.n != m.n {
            return Err(contract_err!("stage {i} is {}×{}, expected {}×{}", s.n, s.n, m.n, m.n));
        }
        check_stochastic(s, &format!("stage {i}"))?;
        m = s.matmul(&m);
    }
    Ok(m)
}

/// `rownorm(0.5·A + 0.5·I)`
pub fn residual_mix(a: &AttentionMatrix) -> AttentionMatrix {
    let n = a.n;
    let mut m = AttentionMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            m.data[i * n + j] = 0.5 * a.at(i, j) + if i == j { 0.5 } else { 0.0 };
        }
        let s: f64 = m.row(i).iter().sum();
        for j in 0..n {
            m.data[i * n + j] /= s;
        }
    }
    m
}

/// `Â_L · … · Â_1`
pub fn rollout_matrix(record: &AttentionRecord) -> Result<AttentionMatrix> {
    let mut r: Option<AttentionMatrix> = None;
    for (l, stages) in record.layers.iter().enumerate() {
        let a = residual_mix(&layer_matrix(stages).map_err(|e| contract_err!("layer {l}: {e}"))?);
        r = Some(match r {
            None => a,
            Some(prev) if prev.n != a.n => return Err(contract_err!("layer {l} changes the token count")),
            Some(prev) => a.matmul(&prev),
        });
    }
    r.ok_or_else(|| contract_err!("empty attention record"))
}

/// Unscaled content-token attribution: the class-token row, or the column
/// mean when there is no class token.
pub fn raw_attribution(record: &AttentionRecord) -> Result<Vec<f64>> {
    let r = rollout_matrix(record)?;
    let n = r.n;
    Ok(if record.has_class_token {
        r.row(0)[1..].to_vec()
    } else {
        (0..n).map(|j| (0..n).map(|i| r.at(i, j)).sum::<f64>() / n as f64).collect()
    })
}

/// Divides by the maximum; an all-zero vector becomes all ones.
fn rescale(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        v.iter_mut().for_each(|x| *x = 1.0);
    } else {
        v.iter_mut().for_each(|x| *x = (*x / max).clamp(0.0, 1.0));
    }
    v
}

/// Content-token attribution rescaled into `[0, 1]`.
pub fn attention_rollout(record: &AttentionRecord) -> Result<Vec<f64>> {
    raw_attribution(record).map(rescale)
}

/// Paints token `t` (lexicographic in `grid`) over its `edge³` cube.
pub fn attribution_volume(dims: [usize; 3], grid: [usize; 3], edge: usize, values: &[f64]) -> Result<Volume> {
    let n: usize = grid.iter().product();
    if values.len() != n || (0..3).any(|a| grid[a] * edge != dims[a]) {
        return Err(contract_err!("{} values on grid {:?}×{} do not tile {:?}", values.len(), grid, edge, dims));
    }
    Ok(Volume::from_fn(dims, |x, y, z| {
        let c = [x / edge, y / edge, z / edge];
        values[(c[0] * grid[1] + c[1]) * grid[2] + c[2]] as f32
    }))
}

/// Two-level map: per-block patch attributions weighted by block weights.
///
/// `block_weights` defaults to each block's mean raw patch attribution;
/// either way the weights are normalized to sum to one before the voxel
/// value `weight × patch attribution` is taken and the map is rescaled.
pub fn hierarchical_rollout(
    cfg: &ModelConfig,
    blocks: &[AttentionRecord],
    block_weights: Option<&[f64]>,
) -> Result<Volume> {
    let nb = cfg.n_blocks();
    if blocks.len() != nb {
        return Err(contract_err!("expected {} block records, got {}", nb, blocks.len()));
    }
    let raw = blocks
        .iter()
        .enumerate()
        .map(|(b, r)| raw_attribution(r).map_err(|e| contract_err!("block {b}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    let mut w: Vec<f64> = match block_weights {
        Some(w) if w.len() != nb => return Err(contract_err!("{} block weights for {} blocks", w.len(), nb)),
        Some(w) => w.to_vec(),
        None => raw.iter().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect(),
    };
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        w.iter_mut().for_each(|x| *x = 1.0 / nb as f64);
    }
    let bgrid = cfg.block_grid();
    let pgrid = cfg.token_grid();
    let (be, pe) = (cfg.block_edge, cfg.token_edge());
    let mut values = vec![0.0f64; cfg.input.iter().product()];
    let [_, dy, dz] = cfg.input;
    for b in 0..nb {
        let bc = grid_coord(bgrid, b);
        for (p, &a) in raw[b].iter().enumerate() {
            let pc = grid_coord(pgrid, p);
            let o: Vec<usize> = (0..3).map(|k| bc[k] * be + pc[k] * pe).collect();
            for x in o[0]..o[0] + pe {
                for y in o[1]..o[1] + pe {
                    for z in o[2]..o[2] + pe {
                        values[(x * dy + y) * dz + z] = w[b] * a;
                    }
                }
            }
        }
    }
    let values = rescale(values);
    Volume::new(cfg.input, values.into_iter().map(|v| v as f32).collect(), None)
}

/// Attribution volume for whichever architecture produced `rec`.
pub fn rollout_map(cfg: &ModelConfig, rec: &ForwardRecords) -> Result<Volume> {
    match cfg.variant {
        Variant::Nit | Variant::Mvnit => {
            let want = if cfg.variant == Variant::Nit { 1 } else { 3 };
            if rec.views.len() != want {
                return Err(contract_err!("{} needs {} attention records, got {}", cfg.variant.name(), want, rec.views.len()));
            }
            let mut acc = vec![0.0f64; cfg.n_blocks()];
            for r in &rec.views {
                for (a, v) in acc.iter_mut().zip(attention_rollout(r)?) {
                    *a += v;
                }
            }
            attribution_volume(cfg.input, cfg.block_grid(), cfg.block_edge, &rescale(acc))
        }
        Variant::Minit => hierarchical_rollout(cfg, &rec.blocks, None),
        Variant::Mignit => {
            let g = rec.global.as_ref().ok_or_else(|| contract_err!("mignit rollout needs the global attention record"))?;
            let w = raw_attribution(g)?;
            hierarchical_rollout(cfg, &rec.blocks, Some(&w))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(layers: Vec<Vec<AttentionMatrix>>, cls: bool) -> AttentionRecord {
        AttentionRecord { layers, has_class_token: cls }
    }

    #[test]
    fn uniform_single_layer() {
        let a = attention_rollout(&rec(vec![vec![AttentionMatrix::uniform(5)]], true)).unwrap();
        assert!(a.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_stack_uses_convention() {
        let a = attention_rollout(&rec(vec![vec![AttentionMatrix::identity(4)]; 3], true)).unwrap();
        assert_eq!(a, vec![1.0; 3]);
        let b = attention_rollout(&rec(vec![vec![AttentionMatrix::identity(4)]; 3], false)).unwrap();
        assert_eq!(b, vec![1.0; 4]);
    }

    #[test]
    fn rejects_non_stochastic() {
        let bad = AttentionMatrix { n: 2, data: vec![0.5, 0.6, 0.5, 0.5] };
        assert!(rollout_matrix(&rec(vec![vec![bad]], false)).is_err());
    }

    #[test]
    fn stage_order() {
        // swap then keep-first: later stage on the left
        let swap = AttentionMatrix { n: 2, data: vec![0.0, 1.0, 1.0, 0.0] };
        let first = AttentionMatrix { n: 2, data: vec![1.0, 0.0, 1.0, 0.0] };
        let m = layer_matrix(&[swap.clone(), first.clone()]).unwrap();
        assert_eq!(m, first.matmul(&swap));
    }
}
