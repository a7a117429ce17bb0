//! Fused multimodal sequence and sparse cross-modal attention.

use std::io::Write;
use std::path::Path;

use crate::attention::{distil_block, sinusoidal_pe, sparse_mha, AttentionConfig, AttentionParams, AttentionTrace, DistilParams};
use crate::autodiff::{Params, Tape, Var};
use crate::error::{MaestroError, Result};
use crate::opcount::OpCount;

pub struct FusedSequence<'t> {
    pub c: Var<'t>,
    /// `[start, end)` token range of each modality, in manifest order.
    pub boundaries: Vec<(usize, usize)>,
}

impl FusedSequence<'_> {
    pub fn len(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `concat_j(z_j + ME_j + PE_local)`. `table` is the `[M, d]` modality
/// embedding; `None` drops the modality term.
pub fn build_multimodal_sequence<'t>(tape: &'t Tape, features: &[Var<'t>], table: Option<Var<'t>>) -> Result<FusedSequence<'t>> {
    if features.is_empty() {
        return Err(MaestroError::contract("fusion needs at least one modality"));
    }
    if let Some(t) = table {
        if t.shape()[0] != features.len() {
            return Err(MaestroError::contract(format!(
                "{} modality vectors for {} feature blocks",
                t.shape()[0],
                features.len()
            )));
        }
    }
    let mut parts = Vec::with_capacity(features.len());
    let mut boundaries = Vec::with_capacity(features.len());
    let mut start = 0;
    for (j, z) in features.iter().enumerate() {
        let s = z.shape();
        let pe = tape.leaf(&sinusoidal_pe(s[0], s[1]));
        let mut zh = z.add(pe);
        if let Some(t) = table {
            zh = zh.add_row(t.gather_rows(&[j]));
        }
        parts.push(zh);
        boundaries.push((start, start + s[0]));
        start += s[0];
    }
    let c = if parts.len() == 1 {
        parts[0]
    } else {
        Var::concat_rows(&parts)
    };
    Ok(FusedSequence { c, boundaries })
}

pub struct CrossModalOutput<'t> {
    /// `[ceil(L / 2), d]` after distillation.
    pub e: Var<'t>,
    pub trace: AttentionTrace,
}

/// Sparse self-attention across the whole fused sequence, then residual and distil.
#[allow(clippy::too_many_arguments)]
pub fn cross_modal_attend<'t>(
    tape: &'t Tape,
    params: &Params,
    attn: &AttentionParams,
    distil: &DistilParams,
    fused: &FusedSequence<'t>,
    cfg: &AttentionConfig,
    u: f64,
    seed: u64,
    mut counter: Option<&mut OpCount>,
) -> CrossModalOutput<'t> {
    let r = sparse_mha(tape, params, attn, fused.c, cfg, u, seed, counter.as_mut().map(|c| (&mut **c, "cross")));
    let s_dot = r.out.add(fused.c);
    let e = distil_block(tape, params, distil, s_dot, fused.c, counter.map(|c| (c, "cross")));
    CrossModalOutput { e, trace: r.trace }
}

/// Writes an averaged `[L, L]` attention map as CSV: a header row naming the
/// modality of every key column, then one row per query prefixed by its modality.
pub fn export_attention_map(path: &Path, map: &[f64], boundaries: &[(usize, usize)], names: &[String]) -> Result<()> {
    let len = boundaries.last().map_or(0, |b| b.1);
    if map.len() != len * len || names.len() != boundaries.len() {
        return Err(MaestroError::contract("attention map does not match boundaries"));
    }
    let owner: Vec<&str> = boundaries
        .iter()
        .zip(names)
        .flat_map(|(&(a, b), n)| std::iter::repeat_n(n.as_str(), b - a))
        .collect();
    let mut out = String::from("query_modality");
    for o in &owner {
        out.push(',');
        out.push_str(o);
    }
    out.push('\n');
    for (q, row) in map.chunks(len).enumerate() {
        out.push_str(owner[q]);
        for v in row {
            out.push_str(&format!(",{v:.12e}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| MaestroError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| MaestroError::io(path, e))
}

/// Mean attention mass from queries in segment `a` to keys in segment `b`.
pub fn segment_mass(map: &[f64], boundaries: &[(usize, usize)], a: usize, b: usize) -> f64 {
    let len = boundaries.last().map_or(0, |x| x.1);
    let (qa, qb) = boundaries[a];
    let (ka, kb) = boundaries[b];
    let total: f64 = (qa..qb).map(|q| map[q * len + ka..q * len + kb].iter().sum::<f64>()).sum();
    total / (qb - qa) as f64
}
