//! Classification metrics, missingness sweeps and analytic operation counts.

use serde::Serialize;

use crate::attention::{mha_macs, AttentionConfig};
use crate::error::{MaestroError, Result};
use crate::model::{Maestro, TokenizedSample};
use crate::opcount::OpCount;
use crate::rng::{derive_seed, rng_for};
use crate::training::apply_modality_dropout;

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(MaestroError::contract(format!(
            "need equal non-empty prediction and label lists, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let ok = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ok as f64 / preds.len() as f64)
}

/// `[true class][predicted class]` counts over 1-based labels.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    check(preds, labels)?;
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == 0 || l == 0 || p > classes || l > classes {
            return Err(MaestroError::contract(format!("class index outside 1..={classes}")));
        }
        m[l - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class scores; an undefined ratio (zero denominator) counts as 0.
pub fn per_class(confusion: &[Vec<u64>]) -> Vec<ClassMetrics> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let support: u64 = confusion[k].iter().sum();
            let predicted: u64 = (0..c).map(|r| confusion[r][k]).sum();
            let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            ClassMetrics {
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support,
            }
        })
        .collect()
}

pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    let cm = confusion_matrix(preds, labels, classes)?;
    Ok(per_class(&cm).iter().map(|m| m.f1).sum::<f64>() / classes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImprovementKind {
    Absolute,
    /// In percent of the baseline.
    Relative,
}

pub fn improvement(ours: f64, base: f64, kind: ImprovementKind) -> Result<f64> {
    match kind {
        ImprovementKind::Absolute => Ok(ours - base),
        ImprovementKind::Relative if base > 0.0 => Ok((ours - base) / base * 100.0),
        ImprovementKind::Relative => Err(MaestroError::contract("relative improvement needs a positive baseline")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub seed: u64,
    pub missing_level: f64,
}

impl EvalReport {
    pub fn from_predictions(preds: &[usize], labels: &[usize], classes: usize, seed: u64, level: f64) -> Result<Self> {
        let confusion = confusion_matrix(preds, labels, classes)?;
        let pc = per_class(&confusion);
        Ok(Self {
            accuracy: accuracy(preds, labels)?,
            macro_f1: pc.iter().map(|m| m.f1).sum::<f64>() / classes as f64,
            per_class: pc,
            confusion,
            seed,
            missing_level: level,
        })
    }
}

pub fn predict_all(model: &Maestro, samples: &[TokenizedSample]) -> Result<Vec<usize>> {
    samples.iter().map(|s| Ok(model.predict(s, model.config.seed)?.1)).collect()
}

/// Clean evaluation with the checkpoint's forward seed.
pub fn evaluate(model: &Maestro, samples: &[TokenizedSample]) -> Result<EvalReport> {
    let preds = predict_all(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    EvalReport::from_predictions(&preds, &labels, model.shape.classes, model.config.seed, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub level: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub trials: Vec<EvalReport>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// For every level, drops each modality of each sample independently with that
/// probability (keeping at least one) and evaluates; repeated for `trials`.
pub fn missingness_sweep(model: &Maestro, samples: &[TokenizedSample], levels: &[f64], trials: usize, seed: u64) -> Result<Vec<SweepPoint>> {
    if trials == 0 {
        return Err(MaestroError::contract("sweep needs at least one trial"));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            if !(0.0..=1.0).contains(&level) {
                return Err(MaestroError::contract(format!("missingness level {level} outside [0, 1]")));
            }
            let reports = (0..trials)
                .map(|t| {
                    let trial_seed = derive_seed(derive_seed(seed, li as u64), t as u64);
                    let preds = samples
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let dropped = apply_modality_dropout(s, level, &mut rng_for(trial_seed, i as u64));
                            Ok(model.predict(&dropped, model.config.seed)?.1)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    EvalReport::from_predictions(&preds, &labels, model.shape.classes, trial_seed, level)
                })
                .collect::<Result<Vec<_>>>()?;
            let (am, asd) = mean_std(&reports.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (fm, fsd) = mean_std(&reports.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            Ok(SweepPoint {
                level,
                accuracy_mean: am,
                accuracy_std: asd,
                macro_f1_mean: fm,
                macro_f1_std: fsd,
                trials: reports,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub len: usize,
    pub stage: &'static str,
    pub sparse: OpCount,
    pub dense: OpCount,
}

impl ScalingRow {
    /// Score, attend and lazy-fill MACs, without the projections.
    pub fn sparse_attention(&self) -> u64 {
        self.sparse.prefixed(&format!("{}.scores", self.stage))
            + self.sparse.prefixed(&format!("{}.attend", self.stage))
            + self.sparse.prefixed(&format!("{}.lazy", self.stage))
    }

    pub fn dense_attention(&self) -> u64 {
        self.dense.prefixed(&format!("{}.attend", self.stage))
    }
}

/// Analytic counts for both attention stages over a grid of sequence lengths:
/// per-modality self-attention at budget `u` and cross-modal attention at `u_cross`.
pub fn count_ops(cfg: &AttentionConfig, lens: &[usize], u: f64, u_cross: f64) -> Vec<ScalingRow> {
    lens.iter()
        .flat_map(|&len| {
            [("encoder", u), ("cross", u_cross)].map(|(stage, b)| ScalingRow {
                len,
                stage,
                sparse: mha_macs(stage, len, cfg, Some(b)),
                dense: mha_macs(stage, len, cfg, None),
            })
        })
        .collect()
}

/// Least-squares `y = a * x` without intercept; returns `(a, R^2)` with
/// `R^2 = 1 - SS_res / SS_tot` about the mean of `y`.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let a = x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>() / x.iter().map(|u| u * u).sum::<f64>();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a * u).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    (a, 1.0 - ss_res / ss_tot)
}
