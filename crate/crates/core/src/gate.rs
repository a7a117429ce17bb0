//! Availability-driven budget gate: `u = clamp(floor(sigmoid(G(m + eps(1 - m))) * beta), 1, beta)`.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::{MaestroError, Result};
use crate::rng::glorot;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    pub hidden: usize,
    pub beta_max: f64,
    pub eps: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            beta_max: 5.0,
            eps: 0.01,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(MaestroError::Config("gate.hidden must be >= 1".into()));
        }
        if !(self.beta_max >= 1.0) || self.beta_max.fract() != 0.0 {
            return Err(MaestroError::Config("gate.beta_max must be an integer >= 1".into()));
        }
        if !(self.eps > 0.0 && self.eps <= 0.1) {
            return Err(MaestroError::Config("gate.eps must lie in (0, 0.1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateParams {
    pub fn register(params: &mut Params, m: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: params.add("gate.w1", glorot(rng, m, hidden)),
            b1: params.add("gate.b1", Tensor::zeros(&[hidden])),
            w2: params.add("gate.w2", glorot(rng, hidden, m)),
            b2: params.add("gate.b2", Tensor::zeros(&[m])),
        }
    }
}

/// Checks that a mask is a 0/1 vector of the expected length.
pub fn validate_mask(mask: &[f64], m: usize) -> Result<()> {
    if mask.len() != m {
        return Err(MaestroError::contract(format!(
            "mask has {} entries, expected {m}",
            mask.len()
        )));
    }
    if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(MaestroError::contract("mask entries must be exactly 0 or 1"));
    }
    Ok(())
}

/// Pre-floor budgets `sigmoid(G(m + eps(1 - m))) * beta` as a `[M]` tape value.
pub fn gate_pre_floor<'t>(
    tape: &'t Tape,
    params: &Params,
    p: &GateParams,
    cfg: &GateConfig,
    mask: &[f64],
) -> Var<'t> {
    let input: Vec<f64> = mask.iter().map(|&v| v + cfg.eps * (1.0 - v)).collect();
    let x = tape.constant(&[1, mask.len()], input);
    x.matmul(tape.param(params, p.w1))
        .add_row(tape.param(params, p.b1))
        .relu()
        .matmul(tape.param(params, p.w2))
        .add_row(tape.param(params, p.b2))
        .sigmoid()
        .scale(cfg.beta_max)
}

/// Differentiable budgets: straight-through floor then clamp to `[1, beta]`.
/// With `smooth` the floor is skipped, leaving a fully differentiable path.
pub fn gate_forward<'t>(
    tape: &'t Tape,
    params: &Params,
    p: &GateParams,
    cfg: &GateConfig,
    mask: &[f64],
    smooth: bool,
) -> Var<'t> {
    let pre = gate_pre_floor(tape, params, p, cfg, mask);
    let pre = if smooth { pre } else { pre.floor_ste() };
    pre.clamp(1.0, cfg.beta_max)
}

/// Integer budget per modality.
pub fn compute_budget(params: &Params, p: &GateParams, cfg: &GateConfig, mask: &[f64]) -> Result<Vec<usize>> {
    validate_mask(mask, params.get(p.b2).len())?;
    let tape = Tape::new();
    Ok(gate_forward(&tape, params, p, cfg, mask, false)
        .values()
        .into_iter()
        .map(|u| u as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_params;
    use rand::SeedableRng;

    fn random_gate(m: usize, seed: u64, scale: f64) -> (Params, GateParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let p = GateParams::register(&mut params, m, 16, &mut rng);
        for id in [p.w1, p.b1, p.w2, p.b2] {
            let shape = params.get(id).shape().to_vec();
            *params.get_mut(id) = crate::rng::uniform(&mut rng, &shape, scale).requiring_grad();
        }
        (params, p)
    }

    fn masks(m: usize) -> impl Iterator<Item = Vec<f64>> {
        (0u32..1 << m).map(move |bits| (0..m).map(|j| ((bits >> j) & 1) as f64).collect())
    }

    #[test]
    fn zero_weights_give_two() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GateParams::register(&mut params, 3, 16, &mut rng);
        for id in [p.w1, p.w2] {
            let shape = params.get(id).shape().to_vec();
            *params.get_mut(id) = Tensor::zeros(&shape).requiring_grad();
        }
        let cfg = GateConfig::default();
        for mask in masks(3) {
            assert_eq!(compute_budget(&params, &p, &cfg, &mask).unwrap(), vec![2, 2, 2]);
        }
    }

    #[test]
    fn every_mask_stays_in_range() {
        let cfg = GateConfig::default();
        for m in 1..=10 {
            // large weights push sigmoid to both saturation ends
            let (params, p) = random_gate(m, m as u64, 4.0);
            for mask in masks(m) {
                let u = compute_budget(&params, &p, &cfg, &mask).unwrap();
                assert!(u.iter().all(|&v| (1..=5).contains(&v)), "{mask:?} -> {u:?}");
            }
        }
    }

    #[test]
    fn budgets_match_formula_oracle() {
        let cfg = GateConfig::default();
        let (params, p) = random_gate(4, 9, 2.0);
        let w1 = params.get(p.w1);
        let w2 = params.get(p.w2);
        for mask in masks(4) {
            let x: Vec<f64> = mask.iter().map(|v| v + 0.01 * (1.0 - v)).collect();
            let h: Vec<f64> = (0..16)
                .map(|k| {
                    let s: f64 = (0..4).map(|i| x[i] * w1.at(i, k)).sum::<f64>() + params.get(p.b1).values()[k];
                    s.max(0.0)
                })
                .collect();
            let want: Vec<usize> = (0..4)
                .map(|j| {
                    let z: f64 = (0..16).map(|k| h[k] * w2.at(k, j)).sum::<f64>() + params.get(p.b2).values()[j];
                    let u = (5.0 / (1.0 + (-z).exp())).floor();
                    u.clamp(1.0, 5.0) as usize
                })
                .collect();
            assert_eq!(compute_budget(&params, &p, &cfg, &mask).unwrap(), want);
        }
    }

    #[test]
    fn all_missing_mask_is_valid_and_deterministic() {
        let cfg = GateConfig::default();
        let (params, p) = random_gate(5, 3, 1.0);
        let a = compute_budget(&params, &p, &cfg, &[0.0; 5]).unwrap();
        assert_eq!(a, compute_budget(&params, &p, &cfg, &[0.0; 5]).unwrap());
        assert!(a.iter().all(|&v| (1..=5).contains(&v)));
    }

    #[test]
    fn invalid_masks_rejected() {
        let (params, p) = random_gate(2, 1, 1.0);
        let cfg = GateConfig::default();
        assert!(compute_budget(&params, &p, &cfg, &[1.0]).is_err());
        assert!(compute_budget(&params, &p, &cfg, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn straight_through_passes_pre_floor_gradient() {
        let cfg = GateConfig::default();
        let (params, p) = random_gate(3, 5, 0.5);
        let mask = [1.0, 0.0, 1.0];
        let weights = [0.3, -1.2, 0.7];
        // pre-floor path against finite differences
        let r = finite_diff_check_params(
            |t, pr| Ok(gate_pre_floor(t, pr, &p, &cfg, &mask).mul_const(weights.to_vec()).sum()),
            &params,
            1e-5,
            |_, _| true,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        // the floored loss backpropagates exactly the pre-floor gradient
        let grads = |floor: bool| {
            let mut w = params.clone();
            w.zero_grad();
            let t = Tape::new();
            let pre = gate_pre_floor(&t, &w, &p, &cfg, &mask);
            let pre = if floor { pre.floor_ste() } else { pre };
            t.backward_into(pre.mul_const(weights.to_vec()).sum(), &mut w).unwrap();
            w.get(p.w1).grad().unwrap().to_vec()
        };
        assert_eq!(grads(true), grads(false));
    }
}
