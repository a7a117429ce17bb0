//! Sensor corruption models applied to a chosen subset of modalities.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use super::MultimodalSample;
use crate::error::{MaestroError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptMode {
    /// `x = eps`, `eps ~ N(0, sigma^2)`.
    ReplaceGaussian,
    /// `x = x + eps`.
    AdditiveGaussian,
    /// `x = x + eps + b * s`, `b ~ Bernoulli(p)`, `s` uniform on `{-m, +m}`.
    AdditiveSpikes,
    /// Marks the modality missing.
    Drop,
}

impl FromStr for CorruptMode {
    type Err = MaestroError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "replace_gaussian" => Self::ReplaceGaussian,
            "additive_gaussian" => Self::AdditiveGaussian,
            "additive_spikes" => Self::AdditiveSpikes,
            "drop" => Self::Drop,
            other => return Err(MaestroError::contract(format!("unknown corruption mode {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptParams {
    pub sigma: f64,
    pub spike_p: f64,
    pub spike_mag: f64,
}

impl Default for CorruptParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            spike_p: 0.01,
            spike_mag: 5.0,
        }
    }
}

/// Corrupts the modalities listed in `targets`; all others are left untouched.
pub fn corrupt(
    sample: &MultimodalSample,
    mode: CorruptMode,
    params: &CorruptParams,
    targets: &[usize],
    rng: &mut impl Rng,
) -> Result<MultimodalSample> {
    if !(params.sigma >= 0.0) || !(0.0..=1.0).contains(&params.spike_p) {
        return Err(MaestroError::contract("sigma must be >= 0 and spike_p in [0, 1]"));
    }
    let noise = Normal::new(0.0, params.sigma).map_err(|e| MaestroError::contract(e.to_string()))?;
    let spike = Bernoulli::new(params.spike_p).map_err(|e| MaestroError::contract(e.to_string()))?;
    let mut out = sample.clone();
    for &j in targets {
        let slot = out
            .data
            .get_mut(j)
            .ok_or_else(|| MaestroError::contract(format!("modality index {j} out of range")))?;
        if mode == CorruptMode::Drop {
            *slot = None;
            continue;
        }
        let Some(rows) = slot else { continue };
        for x in rows.iter_mut().flatten() {
            let eps = if params.sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            *x = match mode {
                CorruptMode::ReplaceGaussian => eps,
                CorruptMode::AdditiveGaussian => *x + eps,
                CorruptMode::AdditiveSpikes => {
                    let s = if spike.sample(rng) {
                        if rng.random::<bool>() { params.spike_mag } else { -params.spike_mag }
                    } else {
                        0.0
                    };
                    *x + eps + s
                }
                CorruptMode::Drop => unreachable!(),
            };
        }
    }
    Ok(out)
}
