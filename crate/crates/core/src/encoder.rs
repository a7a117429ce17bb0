//! Per-modality encoder: symbol embedding, positional encoding, budgeted sparse
//! self-attention, residual and distillation, repeated per layer.

use rand_chacha::ChaCha8Rng;

use crate::attention::{distil_block, sinusoidal_pe, sparse_mha, AttentionConfig, AttentionParams, AttentionTrace, DistilParams};
use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::{MaestroError, Result};
use crate::opcount::OpCount;
use crate::rng::{derive_seed, uniform};
use crate::sax::MISSING;

/// Tokens of one modality: one symbol row and one PAA row per variate.
/// PAA entries under a missing symbol are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityTokens {
    pub symbols: Vec<Vec<u16>>,
    pub paa: Vec<Vec<f64>>,
}

impl ModalityTokens {
    /// A fully missing modality with `variates` rows of length `w`.
    pub fn missing(variates: usize, w: usize) -> Self {
        Self {
            symbols: vec![vec![MISSING; w]; variates],
            paa: vec![vec![0.0; w]; variates],
        }
    }

    pub fn width(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    pub fn is_fully_missing(&self) -> bool {
        self.symbols.iter().flatten().all(|&s| s == MISSING)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// `[alpha + 1, d]`, row 0 is the missing symbol.
    pub embedding: ParamId,
    /// `[1, d]` and `[d]`: linear lift of raw PAA values (symbol-free ablation).
    pub raw_w: ParamId,
    pub raw_b: ParamId,
    pub layers: Vec<(AttentionParams, DistilParams)>,
}

impl EncoderParams {
    pub fn register(
        params: &mut Params,
        prefix: &str,
        alpha: usize,
        d: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = params.add(format!("{prefix}.embedding"), uniform(rng, &[alpha + 1, d], 0.5));
        let raw_w = params.add(format!("{prefix}.raw_w"), uniform(rng, &[1, d], 0.5));
        let raw_b = params.add(format!("{prefix}.raw_b"), crate::Tensor::zeros(&[d]));
        let layers = (0..layers)
            .map(|l| {
                (
                    AttentionParams::register(params, &format!("{prefix}.l{l}.attn"), d, rng),
                    DistilParams::register(params, &format!("{prefix}.l{l}.distil"), d, rng),
                )
            })
            .collect();
        Self {
            embedding,
            raw_w,
            raw_b,
            layers,
        }
    }
}

fn check_tokens(tokens: &ModalityTokens, alphabet: usize) -> Result<usize> {
    let w = tokens.width();
    if tokens.symbols.is_empty() || w == 0 {
        return Err(MaestroError::contract("modality has no tokens"));
    }
    if tokens.paa.len() != tokens.symbols.len() {
        return Err(MaestroError::contract("symbol and PAA variate counts differ"));
    }
    for (s, p) in tokens.symbols.iter().zip(&tokens.paa) {
        if s.len() != w || p.len() != w {
            return Err(MaestroError::contract("variates of one modality differ in length"));
        }
        if let Some(bad) = s.iter().find(|&&v| v as usize > alphabet) {
            return Err(MaestroError::contract(format!(
                "symbol {bad} outside alphabet of size {alphabet}"
            )));
        }
    }
    Ok(w)
}

/// `[W, d]` token features: the embedding rows of every variate's symbols, summed.
pub fn embed_symbols<'t>(tape: &'t Tape, params: &Params, enc: &EncoderParams, tokens: &ModalityTokens) -> Result<Var<'t>> {
    let table = tape.param(params, enc.embedding);
    check_tokens(tokens, table.shape()[0] - 1)?;
    let mut acc: Option<Var<'t>> = None;
    for row in &tokens.symbols {
        let idx: Vec<usize> = row.iter().map(|&s| s as usize).collect();
        let e = table.gather_rows(&idx);
        acc = Some(match acc {
            Some(a) => a.add(e),
            None => e,
        });
    }
    Ok(acc.expect("at least one variate"))
}

/// Symbol-free variant: present positions get `paa * raw_w + raw_b`, missing
/// positions the missing-symbol embedding; summed over variates.
pub fn embed_raw<'t>(tape: &'t Tape, params: &Params, enc: &EncoderParams, tokens: &ModalityTokens) -> Result<Var<'t>> {
    let table = tape.param(params, enc.embedding);
    let w = check_tokens(tokens, table.shape()[0] - 1)?;
    let d = table.shape()[1];
    let raw_w = tape.param(params, enc.raw_w);
    let raw_b = tape.param(params, enc.raw_b);
    let missing_row = table.gather_rows(&vec![MISSING as usize; w]);
    let mut acc: Option<Var<'t>> = None;
    for (syms, vals) in tokens.symbols.iter().zip(&tokens.paa) {
        let present: Vec<f64> = syms.iter().map(|&s| f64::from(u8::from(s != MISSING))).collect();
        let col: Vec<f64> = vals.iter().zip(&present).map(|(v, p)| v * p).collect();
        let lifted = tape.constant(&[w, 1], col).matmul(raw_w).add_row(raw_b);
        let on: Vec<f64> = present.iter().flat_map(|&p| std::iter::repeat_n(p, d)).collect();
        let off: Vec<f64> = on.iter().map(|p| 1.0 - p).collect();
        let e = lifted.mul_const(on).add(missing_row.mul_const(off));
        acc = Some(match acc {
            Some(a) => a.add(e),
            None => e,
        });
    }
    Ok(acc.expect("at least one variate"))
}

/// Output length after `layers` distillation steps.
pub fn encoded_len(w: usize, layers: usize) -> usize {
    (0..layers).fold(w, |l, _| l.div_ceil(2))
}

pub struct EncodedModality<'t> {
    pub z: Var<'t>,
    pub traces: Vec<AttentionTrace>,
}

/// Runs the encoder stack on embedded tokens `[W, d]`.
///
/// `u` sets the sampling budget; `scale`, when given, multiplies each attention
/// output (the gate's differentiable path).
#[allow(clippy::too_many_arguments)]
pub fn encode_modality<'t>(
    tape: &'t Tape,
    params: &Params,
    enc: &EncoderParams,
    embedded: Var<'t>,
    cfg: &AttentionConfig,
    u: f64,
    scale: Option<Var<'t>>,
    seed: u64,
    mut counter: Option<(&mut OpCount, &str)>,
) -> EncodedModality<'t> {
    let shape = embedded.shape();
    let pe = sinusoidal_pe(shape[0], shape[1]);
    let mut x = embedded.add(tape.leaf(&pe));
    let mut traces = Vec::with_capacity(enc.layers.len());
    for (l, (attn, distil)) in enc.layers.iter().enumerate() {
        let tag = counter.as_ref().map(|(_, p)| format!("{p}.l{l}"));
        let sub = counter.as_mut().map(|(c, _)| (&mut **c, tag.as_deref().unwrap()));
        let r = sparse_mha(tape, params, attn, x, cfg, u, derive_seed(seed, l as u64), sub);
        let s_bar = match scale {
            Some(s) => r.out.mul_scalar(s),
            None => r.out,
        };
        let s_dot = s_bar.add(x);
        let sub = counter.as_mut().map(|(c, _)| (&mut **c, tag.as_deref().unwrap()));
        x = distil_block(tape, params, distil, s_dot, x, sub);
        traces.push(r.trace);
    }
    EncodedModality { z: x, traces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_params;
    use rand::SeedableRng;

    fn setup(alpha: usize, d: usize, layers: usize) -> (Params, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let enc = EncoderParams::register(&mut params, "enc0", alpha, d, layers, &mut rng);
        (params, enc)
    }

    fn tokens(rows: Vec<Vec<u16>>) -> ModalityTokens {
        let paa = rows.iter().map(|r| r.iter().map(|&s| s as f64 * 0.1).collect()).collect();
        ModalityTokens { symbols: rows, paa }
    }

    #[test]
    fn missing_symbol_rows_equal_s0() {
        let (params, enc) = setup(5, 4, 1);
        let tape = Tape::new();
        let e = embed_symbols(&tape, &params, &enc, &ModalityTokens::missing(1, 6)).unwrap();
        let s0 = params.get(enc.embedding).row(0).to_vec();
        for row in e.values().chunks(4) {
            assert_eq!(row, &s0[..]);
        }
    }

    #[test]
    fn duplicate_variates_double_rows() {
        let (params, enc) = setup(5, 4, 1);
        let tape = Tape::new();
        let one = embed_symbols(&tape, &params, &enc, &tokens(vec![vec![1, 3, 5, 0]])).unwrap();
        let two = embed_symbols(&tape, &params, &enc, &tokens(vec![vec![1, 3, 5, 0]; 2])).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn out_of_range_symbol_rejected() {
        let (params, enc) = setup(5, 4, 1);
        let tape = Tape::new();
        assert!(embed_symbols(&tape, &params, &enc, &tokens(vec![vec![6]])).is_err());
        assert!(embed_symbols(&tape, &params, &enc, &tokens(vec![vec![1, 2], vec![1]])).is_err());
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let (params, enc) = setup(4, 3, 1);
        let tk = tokens(vec![vec![1, 4, 4, 0, 2], vec![3, 3, 1, 0, 0]]);
        let weights: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = finite_diff_check_params(
            |t, p| Ok(embed_symbols(t, p, &enc, &tk)?.mul_const(weights.clone()).sigmoid().sum()),
            &params,
            1e-5,
            |id, _| id == enc.embedding,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn raw_embedding_uses_s0_for_missing() {
        let (params, enc) = setup(4, 3, 1);
        let tape = Tape::new();
        let tk = tokens(vec![vec![0, 2]]);
        let e = embed_raw(&tape, &params, &enc, &tk).unwrap().values();
        assert_eq!(&e[..3], params.get(enc.embedding).row(0));
        let w = params.get(enc.raw_w).values();
        for c in 0..3 {
            assert!((e[3 + c] - 0.2 * w[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn length_contract() {
        assert_eq!(encoded_len(8, 1), 4);
        assert_eq!(encoded_len(7, 2), 2);
        for layers in 1..3 {
            let (params, enc) = setup(5, 4, layers);
            let cfg = AttentionConfig::new(4, 2, 0.0);
            for w in [1, 5, 8] {
                let tape = Tape::new();
                let e = embed_symbols(&tape, &params, &enc, &tokens(vec![vec![2; w]])).unwrap();
                let z = encode_modality(&tape, &params, &enc, e, &cfg, 2.0, None, 0, None).z;
                assert_eq!(z.shape(), vec![encoded_len(w, layers), 4]);
            }
        }
    }

    #[test]
    fn missing_modality_output_is_sample_independent() {
        let (params, enc) = setup(5, 4, 1);
        let cfg = AttentionConfig::new(4, 1, 0.0);
        let run = || {
            let tape = Tape::new();
            let e = embed_symbols(&tape, &params, &enc, &ModalityTokens::missing(2, 8)).unwrap();
            encode_modality(&tape, &params, &enc, e, &cfg, 3.0, None, 11, None).z.values()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn counted_cost_is_monotone_in_budget() {
        let (params, enc) = setup(5, 4, 1);
        let cfg = AttentionConfig::new(4, 1, 0.0);
        let mut last = 0;
        for u in 1..=5 {
            let tape = Tape::new();
            let e = embed_symbols(&tape, &params, &enc, &tokens(vec![vec![3; 64]])).unwrap();
            let mut c = OpCount::new();
            encode_modality(&tape, &params, &enc, e, &cfg, u as f64, None, 0, Some((&mut c, "m")));
            assert!(c.total() >= last);
            last = c.total();
        }
    }
}
