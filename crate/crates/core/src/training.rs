//! Curriculum modality dropout, Adam, and the early-stopping training loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Params, Tape};
use crate::config::Config;
use crate::error::{MaestroError, Result};
use crate::model::{ForwardOptions, Maestro, TokenizedSample};
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumSchedule {
    pub p_max: f64,
    pub warmup: usize,
    pub max: usize,
}

impl CurriculumSchedule {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            p_max: cfg.curriculum.p_max,
            warmup: cfg.curriculum.warmup,
            max: cfg.curriculum.max,
        }
    }
}

/// `min(p_max, (epoch - warmup) / (max - warmup) * p_max)`, and 0 before warm-up ends.
pub fn dropout_probability(epoch: usize, s: &CurriculumSchedule) -> f64 {
    if epoch < s.warmup {
        return 0.0;
    }
    let ramp = (epoch - s.warmup) as f64 / (s.max - s.warmup) as f64 * s.p_max;
    s.p_max.min(ramp)
}

/// Drops each present modality with probability `p`, always keeping at least one.
/// When every draw drops, one of the originally present modalities survives,
/// chosen uniformly.
pub fn apply_modality_dropout(sample: &TokenizedSample, p: f64, rng: &mut impl Rng) -> TokenizedSample {
    assert!((0.0..=1.0).contains(&p), "dropout probability {p} outside [0, 1]");
    let present: Vec<usize> = (0..sample.mask.len()).filter(|&j| sample.mask[j] == 1.0).collect();
    let mut out = sample.clone();
    if p == 0.0 || present.is_empty() {
        return out;
    }
    let dropped: Vec<usize> = present.iter().copied().filter(|_| rng.random::<f64>() < p).collect();
    let keep = if dropped.len() == present.len() {
        Some(present[rng.random_range(0..present.len())])
    } else {
        None
    };
    for j in dropped {
        if Some(j) != keep {
            out.drop_modality(j);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut Params) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let t = params.get_mut(id);
            let g = t.grad().expect("params track gradients").to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, x) in t.values_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut Params, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for id in params.ids().collect::<Vec<_>>() {
            if let Some(g) = params.get_mut(id).grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

fn scale_grads(params: &mut Params, s: f64) {
    for id in params.ids().collect::<Vec<_>>() {
        if let Some(g) = params.get_mut(id).grad_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub dropout_p: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Forward seed of sample `index` in `epoch`.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(derive_seed(seed, 0xE90C + epoch as u64), index as u64)
}

/// Mean clean cross-entropy (eval mode, checkpoint seed).
pub fn mean_loss(model: &Maestro, params: &Params, samples: &[TokenizedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(MaestroError::contract("loss over an empty split"));
    }
    let opts = ForwardOptions {
        seed: model.config.seed,
        ..Default::default()
    };
    let mut total = 0.0;
    for s in samples {
        let tape = Tape::new();
        let l = model.loss(&tape, params, s, &opts)?.item();
        if !l.is_finite() {
            return Err(MaestroError::numeric("validation", format!("sample loss {l}")));
        }
        total += l;
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model.params` in place and leaves the best-validation parameters installed.
pub fn train(
    model: &mut Maestro,
    train_set: &[TokenizedSample],
    valid_set: &[TokenizedSample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(MaestroError::data("training needs non-empty train and validation splits"));
    }
    let cfg = model.config.clone();
    let sched = CurriculumSchedule::from_config(&cfg);
    let seed = cfg.seed;
    let mut params = model.params.clone();
    let mut opt = Adam::new(&params, cfg.train.lr);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut since_best = 0usize;
    let mut logs = Vec::new();
    let mut stopped_early = false;
    let eligible = |epoch: usize| !cfg.train.select_after_ramp || cfg.ablation.no_dropout || epoch >= sched.max;
    let mut have_best = false;

    for epoch in 0..cfg.train.max_epochs {
        let p = if cfg.ablation.no_dropout { 0.0 } else { dropout_probability(epoch, &sched) };
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_for(seed, 0x5B0F + epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            params.zero_grad();
            for &i in batch {
                let s_seed = sample_seed(seed, epoch, i);
                let sample = apply_modality_dropout(&train_set[i], p, &mut rng_for(s_seed, 0xD40));
                let tape = Tape::new();
                let opts = ForwardOptions {
                    train: true,
                    seed: s_seed,
                    ..Default::default()
                };
                let loss = model.loss(&tape, &params, &sample, &opts)?;
                let lv = loss.item();
                if !lv.is_finite() {
                    return Err(MaestroError::numeric(
                        "train",
                        format!(
                            "loss {lv} at epoch {epoch} batch {b} sample {i}; parameter norm {:.6e}",
                            params.norm()
                        ),
                    ));
                }
                epoch_loss += lv;
                tape.backward_into(loss, &mut params)?;
            }
            scale_grads(&mut params, 1.0 / batch.len() as f64);
            let gn = clip_grad_norm(&mut params, cfg.train.clip_norm);
            if !gn.is_finite() {
                return Err(MaestroError::numeric(
                    "train",
                    format!("gradient norm {gn} at epoch {epoch} batch {b}; parameter norm {:.6e}", params.norm()),
                ));
            }
            opt.step(&mut params);
        }
        let val = mean_loss(model, &params, valid_set)?;
        let log = EpochLog {
            epoch,
            dropout_p: p,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss: val,
        };
        on_epoch(&log);
        logs.push(log);
        if eligible(epoch) {
            if !have_best || val < best.0 {
                best = (val, epoch, params.clone());
                have_best = true;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.train.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    if !have_best {
        // selection window never opened; fall back to the final epoch
        let last = logs.last().expect("at least one epoch");
        best = (last.val_loss, last.epoch, params.clone());
    }
    model.params = best.2;
    model.params.zero_grad();
    Ok(TrainReport {
        epochs: logs,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
    })
}
