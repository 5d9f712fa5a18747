use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::tensor::{Grads, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    SamAdam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::SamAdam => "sam_adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(OptimizerKind::Adamw),
            "sam_adam" | "sam" => Ok(OptimizerKind::SamAdam),
            _ => Err(config_err!("unknown optimizer {:?} (expected adamw or sam_adam)", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// SAM neighbourhood radius.
    pub rho: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adamw, beta1: 0.9, beta2: 0.99, lr: 1e-4, weight_decay: 0.05, rho: 0.05, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.lr > 0.0) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.rho >= 0.0) {
            return Err(config_err!("SAM radius must be nonnegative, got {}", self.rho));
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("epsilon must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// First and second moments (kept in f64) plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Real>(params: &ParamStore<T>) -> Self {
        let z: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { m: z.clone(), v: z, t: 0 }
    }
}

fn check_shapes<T: Real>(params: &ParamStore<T>, grads: &Grads<T>, state: &AdamState) -> Result<()> {
    let ok = grads.len() == params.len()
        && state.m.len() == params.len()
        && params.tensors().iter().zip(grads).zip(&state.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if ok {
        Ok(())
    } else {
        Err(contract_err!("optimizer state, gradients and parameters disagree in shape"))
    }
}

/// Bias-corrected Adam step with decoupled decay `θ ← θ − lr·wd·θ`.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    check_shapes(params, grads, state)?;
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for (j, th) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].f64();
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            let old = th.f64();
            let new = old - lr * mh / (vh.sqrt() + cfg.eps) - lr * cfg.weight_decay * old;
            *th = T::of(new);
        }
    }
    Ok(())
}

/// Global L2 norm across every gradient tensor.
pub fn grad_norm<T: Real>(grads: &Grads<T>) -> f64 {
    grads.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
}

/// Sharpness-aware step around AdamW.
///
/// `eval` returns the loss and gradients at the parameters it is given. It
/// is called twice: at θ and at θ + ρ·g/|g|. The base update is applied at
/// θ with the second gradient. Returns the loss at θ.
pub fn sam_step<T: Real, F>(
    params: &mut ParamStore<T>,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    lr: f64,
    mut eval: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore<T>) -> Result<(f64, Grads<T>)>,
{
    if !(cfg.rho >= 0.0) {
        return Err(config_err!("SAM radius must be nonnegative, got {}", cfg.rho));
    }
    let (loss, g) = eval(params)?;
    let norm = grad_norm(&g);
    let mut perturbed = params.clone();
    if norm > 0.0 && cfg.rho > 0.0 {
        let s = cfg.rho / norm;
        for (p, gi) in perturbed.tensors_mut().iter_mut().zip(&g) {
            for (th, gj) in p.data_mut().iter_mut().zip(gi) {
                *th = T::of(th.f64() + s * gj.f64());
            }
        }
    }
    let (_, g2) = eval(&perturbed)?;
    adamw_step(params, &g2, state, cfg, lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::from_f64(&[1], &[v]).unwrap());
        s
    }

    fn cfg(wd: f64) -> OptimizerConfig {
        OptimizerConfig { lr: 0.1, weight_decay: wd, ..Default::default() }
    }

    #[test]
    fn single_step_oracle() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &vec![vec![1.0]], &mut st, &cfg(0.0), 0.1).unwrap();
        // m̂ = v̂ = 1
        let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.tensors()[0].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_pure_shrink() {
        let mut p = scalar_store(2.0);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &vec![vec![0.0]], &mut st, &cfg(0.3), 0.1).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 2.0 * (1.0 - 0.1 * 0.3));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        let e = adamw_step(&mut p, &vec![vec![0.0, 1.0]], &mut st, &cfg(0.0), 0.1).unwrap_err();
        assert!(matches!(e, crate::Error::Contract(_)));
    }

    #[test]
    fn sam_quadratic_second_gradient() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        let mut seen = Vec::new();
        let c = OptimizerConfig { rho: 0.5, kind: OptimizerKind::SamAdam, ..cfg(0.0) };
        sam_step(&mut p, &mut st, &c, 0.1, |q| {
            let th = q.tensors()[0].data()[0];
            seen.push(2.0 * th);
            Ok((th * th, vec![vec![2.0 * th]]))
        })
        .unwrap();
        assert_eq!(seen, vec![2.0, 3.0]);
    }

    #[test]
    fn sam_zero_gradient_still_evaluates_twice() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p);
        let mut n = 0;
        sam_step(&mut p, &mut st, &cfg(0.0), 0.1, |_| {
            n += 1;
            Ok((0.0, vec![vec![0.0]]))
        })
        .unwrap();
        assert_eq!(n, 2);
        assert_eq!(p.tensors()[0].data()[0], 0.0);
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
