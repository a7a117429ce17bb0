//! Synthetic multimodal datasets with a known dependency structure.
//!
//! Informative modalities carry a sinusoid; the last modality is always pure noise.
//! * `unimodal`: the label sets the frequency of modality 1 only.
//! * `xor-cross`: modalities 1 and 2 each carry a random sign bit in the sinusoid's
//!   polarity, and the label is their XOR, so neither modality alone is informative.
//! * `redundant`: every informative modality encodes the label in its frequency.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, ModalityEntry, MultimodalSample};
use crate::error::{MaestroError, Result};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMode {
    Unimodal,
    XorCross,
    Redundant,
}

impl FromStr for SynthMode {
    type Err = MaestroError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unimodal" => Self::Unimodal,
            "xor-cross" => Self::XorCross,
            "redundant" => Self::Redundant,
            other => return Err(MaestroError::contract(format!("unknown synthetic mode {other}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub mode: SynthMode,
    /// Total modality count, including the trailing noise modality.
    pub modalities: usize,
    pub variates: usize,
    pub length: usize,
    pub classes: usize,
    pub samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(mode: SynthMode) -> Self {
        Self {
            mode,
            modalities: 3,
            variates: 1,
            length: 32,
            classes: 2,
            samples: 3000,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Cycles per window for the XOR carriers.
const XOR_CYCLES: f64 = 2.0;

fn sinusoid(t: usize, cycles: f64, sign: f64, phase: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..t)
        .map(|i| {
            let clean = sign * (2.0 * PI * cycles * i as f64 / t as f64 + phase).sin();
            let n: f64 = StandardNormal.sample(rng);
            // stored as f32 on disk; round now so memory and disk agree
            (clean + noise * n) as f32 as f64
        })
        .collect()
}

fn noise_rows(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.variates)
        .map(|_| {
            (0..spec.length)
                .map(|_| StandardNormal.sample(rng))
                .map(|v: f64| v as f32 as f64)
                .collect()
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    let informative = match spec.mode {
        SynthMode::XorCross => 2,
        _ => 1,
    };
    if spec.modalities < informative + 1 {
        return Err(MaestroError::contract(format!("mode needs at least {} modalities", informative + 1)));
    }
    if spec.classes < 2 || spec.samples < spec.classes || spec.variates == 0 || spec.length < 4 {
        return Err(MaestroError::contract("synthetic dataset needs C >= 2, N >= C, D >= 1, T >= 4"));
    }
    if spec.mode == SynthMode::XorCross && spec.classes != 2 {
        return Err(MaestroError::contract("xor-cross is a two-class task"));
    }
    let mut rng = rng_for(spec.seed, 0x5E7);
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes + 1).collect();
    labels.shuffle(&mut rng);
    let m = spec.modalities;
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let (bit_a, bit_b) = if spec.mode == SynthMode::XorCross {
                let a = rng.random::<bool>();
                (a, a ^ (label == 2))
            } else {
                (false, false)
            };
            let data = (0..m)
                .map(|j| {
                    if j == m - 1 {
                        return Some(noise_rows(spec, &mut rng));
                    }
                    let rows = (0..spec.variates)
                        .map(|_| {
                            let phase = rng.random_range(-0.3..0.3);
                            let (cycles, sign) = match (spec.mode, j) {
                                (SynthMode::XorCross, 0) => (XOR_CYCLES, if bit_a { 1.0 } else { -1.0 }),
                                (SynthMode::XorCross, 1) => (XOR_CYCLES, if bit_b { 1.0 } else { -1.0 }),
                                (SynthMode::Unimodal, 0) | (SynthMode::Redundant, _) => (label as f64, 1.0),
                                // distractor: label-independent frequency
                                _ => (rng.random_range(1..=spec.classes) as f64, 1.0),
                            };
                            sinusoid(spec.length, cycles, sign, phase, spec.noise, &mut rng)
                        })
                        .collect();
                    Some(rows)
                })
                .collect();
            MultimodalSample {
                id: format!("s{i:05}"),
                label,
                data,
            }
        })
        .collect();
    let names: Vec<String> = (0..m)
        .map(|j| if j == m - 1 { "noise".to_string() } else { format!("m{}", j + 1) })
        .collect();
    let ds = Dataset {
        modalities: names
            .into_iter()
            .map(|name| ModalityEntry {
                name,
                hz: 32.0,
                variates: spec.variates,
                length: spec.length,
            })
            .collect(),
        classes: spec.classes,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

fn modality_mean(s: &MultimodalSample, j: usize) -> f64 {
    let rows = s.data[j].as_ref().expect("oracle needs present modalities");
    let n: usize = rows.iter().map(Vec::len).sum();
    rows.iter().flatten().sum::<f64>() / n as f64
}

/// Best accuracy of any one-threshold rule on the per-sample mean of modality `j`
/// (two classes, both polarities, every split point).
pub fn mean_stump_accuracy(ds: &Dataset, j: usize) -> f64 {
    let mut pts: Vec<(f64, usize)> = ds.samples.iter().map(|s| (modality_mean(s, j), s.label)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let total_one = pts.iter().filter(|p| p.1 == 1).count();
    // rule "predict 1 below the cut": correct = ones below + non-ones above
    let mut best = total_one.max(n - total_one);
    let mut ones_below = 0;
    for (k, p) in pts.iter().enumerate() {
        if p.1 == 1 {
            ones_below += 1;
        }
        let below = k + 1;
        let rule = ones_below + (n - below) - (total_one - ones_below);
        best = best.max(rule).max(n - rule);
    }
    best as f64 / n as f64
}

/// Polarity of the XOR carrier in modality `j`, by correlation with the clean template.
pub fn carrier_sign(s: &MultimodalSample, j: usize) -> bool {
    let rows = s.data[j].as_ref().expect("oracle needs present modalities");
    let corr: f64 = rows
        .iter()
        .map(|r| {
            let t = r.len();
            r.iter()
                .enumerate()
                .map(|(i, v)| v * (2.0 * PI * XOR_CYCLES * i as f64 / t as f64).sin())
                .sum::<f64>()
        })
        .sum();
    corr > 0.0
}

/// Accuracy of the joint rule `label = 2 iff sign_1 != sign_2`.
pub fn xor_rule_accuracy(ds: &Dataset) -> f64 {
    let ok = ds
        .samples
        .iter()
        .filter(|s| (carrier_sign(s, 0) != carrier_sign(s, 1)) == (s.label == 2))
        .count();
    ok as f64 / ds.len() as f64
}

/// Best accuracy of either fixed mapping from one modality's carrier sign to a label.
pub fn single_sign_accuracy(ds: &Dataset, j: usize) -> f64 {
    let ok = ds.samples.iter().filter(|s| carrier_sign(s, j) == (s.label == 2)).count() as f64;
    let n = ds.len() as f64;
    ok.max(n - ok) / n
}

/// Dominant frequency bin (1..=max_cycles) of a modality, by projection onto sinusoids.
pub fn dominant_cycles(s: &MultimodalSample, j: usize, max_cycles: usize) -> usize {
    let rows = s.data[j].as_ref().expect("oracle needs present modalities");
    let power = |c: usize| -> f64 {
        rows.iter()
            .map(|r| {
                let t = r.len() as f64;
                let (mut a, mut b) = (0.0, 0.0);
                for (i, v) in r.iter().enumerate() {
                    let w = 2.0 * PI * c as f64 * i as f64 / t;
                    a += v * w.sin();
                    b += v * w.cos();
                }
                a * a + b * b
            })
            .sum()
    };
    (1..=max_cycles).fold(1, |best, c| if power(c) > power(best) { c } else { best })
}
