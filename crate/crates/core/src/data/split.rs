//! Seeded, class-stratified train/validation/test partition.

use rand::seq::SliceRandom;

use crate::error::{MaestroError, Result};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions sample indices by label. Each class is shuffled independently
/// and cut at rounded fractions; the test part takes the remainder.
pub fn stratified_split(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    let fr = [spec.train, spec.valid, spec.test];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(MaestroError::contract("split fractions must be in [0, 1] and sum to 1"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut out = SplitIndices {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for &c in &classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng_for(spec.seed, c as u64));
        let n = idx.len();
        let n_train = (spec.train * n as f64).round() as usize;
        let n_valid = ((spec.valid * n as f64).round() as usize).min(n - n_train);
        let parts = [&idx[..n_train], &idx[n_train..n_train + n_valid], &idx[n_train + n_valid..]];
        for (k, (part, f)) in parts.iter().zip(fr).enumerate() {
            if part.is_empty() && f > 0.0 {
                return Err(MaestroError::data(format!("class {c} leaves split {k} empty")));
            }
        }
        out.train.extend_from_slice(parts[0]);
        out.valid.extend_from_slice(parts[1]);
        out.test.extend_from_slice(parts[2]);
    }
    out.train.sort_unstable();
    out.valid.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
