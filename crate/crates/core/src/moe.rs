//! Loss-free sparse mixture of experts over cross-modal tokens, plus the classifier head.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::{MaestroError, Result};
use crate::opcount::OpCount;
use crate::rng::glorot;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoeConfig {
    pub experts: usize,
    pub k: usize,
    pub d_ff: usize,
    /// Experts map straight to class logits; the classifier head is unused.
    pub experts_emit_logits: bool,
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experts == 0 || self.k == 0 || self.k > self.experts {
            return Err(MaestroError::Config(format!(
                "moe needs 1 <= k <= experts, got k = {} experts = {}",
                self.k, self.experts
            )));
        }
        if self.d_ff == 0 {
            return Err(MaestroError::Config("moe.d_ff must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Ffn {
    pub fn register(params: &mut Params, prefix: &str, d_in: usize, d_ff: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: params.add(format!("{prefix}.w1"), glorot(rng, d_in, d_ff)),
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[d_ff])),
            w2: params.add(format!("{prefix}.w2"), glorot(rng, d_ff, d_out)),
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Params, x: Var<'t>) -> Var<'t> {
        x.matmul(tape.param(params, self.w1))
            .add_row(tape.param(params, self.b1))
            .relu()
            .matmul(tape.param(params, self.w2))
            .add_row(tape.param(params, self.b2))
    }

    pub fn macs(&self, params: &Params, tokens: usize) -> u64 {
        let (a, b) = (params.get(self.w1), params.get(self.w2));
        (tokens * (a.len() + b.len())) as u64
    }
}

#[derive(Clone, Debug)]
pub struct MoeParams {
    pub router_w: ParamId,
    pub router_b: ParamId,
    pub experts: Vec<Ffn>,
}

impl MoeParams {
    pub fn register(params: &mut Params, cfg: &MoeConfig, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let out = if cfg.experts_emit_logits { classes } else { d };
        Self {
            router_w: params.add("moe.router_w", glorot(rng, d, cfg.experts)),
            router_b: params.add("moe.router_b", Tensor::zeros(&[cfg.experts])),
            experts: (0..cfg.experts)
                .map(|i| Ffn::register(params, &format!("moe.expert{i}"), d, cfg.d_ff, out, rng))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierHead {
    pub fn register(params: &mut Params, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: params.add("head.w", glorot(rng, d, classes)),
            b: params.add("head.b", Tensor::zeros(&[classes])),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Params, pooled: Var<'t>) -> Var<'t> {
        pooled
            .matmul(tape.param(params, self.w))
            .add_row(tape.param(params, self.b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision {
    /// `[L][k]` expert indices, ordered by descending weight.
    pub selected: Vec<Vec<usize>>,
    /// `[L][experts]` router softmax.
    pub weights: Vec<Vec<f64>>,
}

impl RoutingDecision {
    pub fn top1(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|s| s[0])
    }
}

/// Top-`k` indices of one weight row, ties to the lowest index.
pub fn top_k(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Router softmax `[L, experts]` on the tape plus the discrete top-k choice.
pub fn route_tokens<'t>(tape: &'t Tape, params: &Params, p: &MoeParams, e: Var<'t>, k: usize) -> (Var<'t>, RoutingDecision) {
    let probs = e
        .matmul(tape.param(params, p.router_w))
        .add_row(tape.param(params, p.router_b))
        .softmax(1);
    let n = p.experts.len();
    let weights: Vec<Vec<f64>> = probs.values().chunks(n).map(<[f64]>::to_vec).collect();
    let selected = weights.iter().map(|w| top_k(w, k)).collect();
    (probs, RoutingDecision { selected, weights })
}

/// `mean_tokens((1/k) sum_selected w_e * expert_e(token))`, then the head
/// (unless experts emit logits). Returns `[1, C]` logits.
#[allow(clippy::too_many_arguments)]
pub fn moe_forward<'t>(
    tape: &'t Tape,
    params: &Params,
    p: &MoeParams,
    head: &ClassifierHead,
    cfg: &MoeConfig,
    e: Var<'t>,
    probs: Var<'t>,
    decision: &RoutingDecision,
    counter: Option<&mut OpCount>,
) -> Result<Var<'t>> {
    let len = e.shape()[0];
    if decision.selected.len() != len {
        return Err(MaestroError::contract(format!(
            "routing covers {} tokens, sequence has {len}",
            decision.selected.len()
        )));
    }
    let mut total: Option<Var<'t>> = None;
    let mut macs = 0u64;
    for (x, expert) in p.experts.iter().enumerate() {
        let idx: Vec<usize> = (0..len).filter(|&t| decision.selected[t].contains(&x)).collect();
        if idx.is_empty() {
            continue;
        }
        let out = expert.forward(tape, params, e.gather_rows(&idx));
        let w = probs.slice_cols(x, 1).gather_rows(&idx);
        let width = out.shape()[1];
        let zero = tape.constant(&[1, width], vec![0.0; width]);
        let placed = out.scale_rows(w).scatter_rows(zero, &idx, len);
        macs += expert.macs(params, idx.len());
        total = Some(match total {
            Some(t) => t.add(placed),
            None => placed,
        });
    }
    let mixed = total.expect("every token selects k >= 1 experts").scale(1.0 / cfg.k as f64);
    let pooled = mixed.mean_rows();
    if let Some(c) = counter {
        let d = e.shape()[1];
        c.add("moe.router", (len * d * p.experts.len()) as u64);
        c.add("moe.experts", macs);
        if !cfg.experts_emit_logits {
            c.add("head", params.get(head.w).len() as u64);
        }
    }
    Ok(if cfg.experts_emit_logits {
        pooled
    } else {
        head.forward(tape, params, pooled)
    })
}

/// Single-FFN replacement for the MoE layer.
pub fn dense_ffn_forward<'t>(tape: &'t Tape, params: &Params, ffn: &Ffn, head: &ClassifierHead, e: Var<'t>) -> Var<'t> {
    head.forward(tape, params, ffn.forward(tape, params, e).mean_rows())
}

/// Per-pattern top-1 counts, keyed by the pattern's position in `patterns`.
pub fn expert_histogram(decisions: &[(usize, RoutingDecision)], patterns: usize, experts: usize) -> Vec<Vec<u64>> {
    let mut h = vec![vec![0u64; experts]; patterns];
    for (pat, d) in decisions {
        for e in d.top1() {
            h[*pat][e] += 1;
        }
    }
    h
}

/// Total-variation distance between two count histograms.
pub fn total_variation(a: &[u64], b: &[u64]) -> f64 {
    let (sa, sb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    0.5 * a.iter().zip(b).map(|(&x, &y)| (x as f64 / sa - y as f64 / sb).abs()).sum::<f64>()
}
