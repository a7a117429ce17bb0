//! The full classifier: tokenizer, gate, per-modality encoders, cross-modal
//! fusion and the expert layer, plus checkpoint persistence.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, AttentionTrace, DistilParams};
use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::config::Config;
use crate::encoder::{embed_raw, embed_symbols, encode_modality, encoded_len, EncoderParams, ModalityTokens};
use crate::error::{MaestroError, Result};
use crate::fusion::{build_multimodal_sequence, cross_modal_attend};
use crate::gate::{gate_forward, validate_mask, GateParams};
use crate::moe::{dense_ffn_forward, moe_forward, route_tokens, ClassifierHead, Ffn, MoeParams, RoutingDecision};
use crate::opcount::OpCount;
use crate::rng::{derive_seed, rng_for};
use crate::sax::{paa_compress, znormalize, RawSeries, SaxCodec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityShape {
    pub name: String,
    pub variates: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub modalities: Vec<ModalityShape>,
    pub classes: usize,
}

/// Model input for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedSample {
    pub tokens: Vec<ModalityTokens>,
    pub mask: Vec<f64>,
    /// 1-based class label.
    pub label: usize,
}

impl TokenizedSample {
    /// Replaces modality `j` with its missing encoding.
    pub fn drop_modality(&mut self, j: usize) {
        let t = &self.tokens[j];
        self.tokens[j] = ModalityTokens::missing(t.symbols.len(), t.width());
        self.mask[j] = 0.0;
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Enables attention dropout.
    pub train: bool,
    pub seed: u64,
    /// Skips the budget floor so the gate path is differentiable everywhere.
    pub smooth_budget: bool,
    pub count_ops: bool,
}

pub struct ForwardOutput<'t> {
    /// `[1, C]`.
    pub logits: Var<'t>,
    pub budgets: Vec<f64>,
    pub routing: Option<RoutingDecision>,
    pub cross_trace: AttentionTrace,
    pub boundaries: Vec<(usize, usize)>,
    pub ops: Option<OpCount>,
}

#[derive(Clone, Debug)]
struct Layout {
    gate: GateParams,
    encoders: Vec<EncoderParams>,
    modality_table: ParamId,
    cross_attn: AttentionParams,
    cross_distil: DistilParams,
    moe: MoeParams,
    ffn: Ffn,
    head: ClassifierHead,
}

#[derive(Clone, Debug)]
pub struct Maestro {
    pub config: Config,
    pub shape: ModelShape,
    pub params: Params,
    codec: SaxCodec,
    layout: Layout,
}

impl Maestro {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: Config, shape: ModelShape) -> Result<Self> {
        config.validate()?;
        if shape.modalities.is_empty() || shape.classes < 2 {
            return Err(MaestroError::contract("model needs >= 1 modality and >= 2 classes"));
        }
        if shape.modalities.iter().any(|m| m.variates == 0 || m.length == 0) {
            return Err(MaestroError::contract("every modality needs >= 1 variate and >= 1 sample"));
        }
        let d = config.encoder.d_model;
        let m = shape.modalities.len();
        let mut rng = rng_for(config.seed, 0x1417);
        let mut params = Params::new();
        let gate = GateParams::register(&mut params, m, config.gate.hidden, &mut rng);
        let encoders = (0..m)
            .map(|j| EncoderParams::register(&mut params, &format!("enc{j}"), config.sax.alpha, d, config.encoder.layers, &mut rng))
            .collect();
        let modality_table = params.add("fusion.modality", crate::rng::uniform(&mut rng, &[m, d], 0.5));
        let cross_attn = AttentionParams::register(&mut params, "cross.attn", d, &mut rng);
        let cross_distil = DistilParams::register(&mut params, "cross.distil", d, &mut rng);
        let moe_cfg = config.moe_config();
        let moe = MoeParams::register(&mut params, &moe_cfg, d, shape.classes, &mut rng);
        let ffn = Ffn::register(&mut params, "ffn", d, moe_cfg.d_ff, d, &mut rng);
        let head = ClassifierHead::register(&mut params, d, shape.classes, &mut rng);
        Ok(Self {
            codec: SaxCodec::new(config.sax.alpha)?,
            config,
            shape,
            params,
            layout: Layout {
                gate,
                encoders,
                modality_table,
                cross_attn,
                cross_distil,
                moe,
                ffn,
                head,
            },
        })
    }

    pub fn codec(&self) -> &SaxCodec {
        &self.codec
    }

    pub fn modality_count(&self) -> usize {
        self.shape.modalities.len()
    }

    /// Token length of modality `j` after the encoder.
    pub fn encoded_len(&self, j: usize) -> usize {
        encoded_len(self.config.word_length(self.shape.modalities[j].length), self.config.encoder.layers)
    }

    /// Length of the fused sequence before the cross-modal distil.
    pub fn fused_len(&self) -> usize {
        (0..self.modality_count()).map(|j| self.encoded_len(j)).sum()
    }

    /// Z-normalize, compress and symbolize every variate; `None` marks a
    /// missing modality. `raw[j][v]` is variate `v` of modality `j`.
    pub fn tokenize(&self, raw: &[Option<Vec<Vec<f64>>>], label: usize) -> Result<TokenizedSample> {
        if raw.len() != self.modality_count() {
            return Err(MaestroError::data(format!(
                "sample has {} modalities, model expects {}",
                raw.len(),
                self.modality_count()
            )));
        }
        if label == 0 || label > self.shape.classes {
            return Err(MaestroError::contract(format!("label {label} outside 1..={}", self.shape.classes)));
        }
        let mut tokens = Vec::with_capacity(raw.len());
        let mut mask = Vec::with_capacity(raw.len());
        for (spec, data) in self.shape.modalities.iter().zip(raw) {
            let w = self.config.word_length(spec.length);
            match data {
                None => {
                    tokens.push(ModalityTokens::missing(spec.variates, w));
                    mask.push(0.0);
                }
                Some(vars) => {
                    if vars.len() != spec.variates || vars.iter().any(|v| v.len() != spec.length) {
                        return Err(MaestroError::data(format!("modality {} has the wrong dimensions", spec.name)));
                    }
                    let mut symbols = Vec::with_capacity(vars.len());
                    let mut paa = Vec::with_capacity(vars.len());
                    for v in vars {
                        let p = paa_compress(&znormalize(&RawSeries::new(v.clone(), 1.0)?), w)?;
                        symbols.push(self.codec.encode(&p, &vec![false; w])?);
                        paa.push(p.values);
                    }
                    tokens.push(ModalityTokens { symbols, paa });
                    mask.push(1.0);
                }
            }
        }
        Ok(TokenizedSample { tokens, mask, label })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Params, sample: &TokenizedSample, opts: &ForwardOptions) -> Result<ForwardOutput<'t>> {
        let cfg = &self.config;
        let m = self.modality_count();
        validate_mask(&sample.mask, m)?;
        if sample.tokens.len() != m {
            return Err(MaestroError::contract("token set does not match modality count"));
        }
        tape.set_train(opts.train);
        let attn_cfg = if cfg.attn.dropout > 0.0 && opts.train {
            cfg.attention_config()
        } else {
            crate::attention::AttentionConfig::new(cfg.encoder.d_model, cfg.attn.heads, 0.0)
        };
        let mut ops = opts.count_ops.then(OpCount::new);

        let (budgets, scales): (Vec<f64>, Vec<Option<Var<'t>>>) = if cfg.ablation.no_adaptive_budget {
            (vec![1.0; m], vec![None; m])
        } else {
            let g = gate_forward(tape, params, &self.layout.gate, &cfg.gate_config(), &sample.mask, opts.smooth_budget);
            let inv = 1.0 / cfg.gate.beta_max;
            (g.values(), (0..m).map(|j| Some(g.slice_cols(j, 1).scale(inv))).collect())
        };

        let mut features = Vec::with_capacity(m);
        for j in 0..m {
            let enc = &self.layout.encoders[j];
            let tk = &sample.tokens[j];
            let embedded = if cfg.ablation.no_sax {
                embed_raw(tape, params, enc, tk)?
            } else {
                embed_symbols(tape, params, enc, tk)?
            };
            let tag = format!("enc{j}");
            let r = encode_modality(
                tape,
                params,
                enc,
                embedded,
                &attn_cfg,
                budgets[j],
                scales[j],
                derive_seed(opts.seed, 0x100 + j as u64),
                ops.as_mut().map(|c| (c, tag.as_str())),
            );
            features.push(r.z);
        }

        let table = (!cfg.ablation.no_modality_embedding).then(|| tape.param(params, self.layout.modality_table));
        let fused = build_multimodal_sequence(tape, &features, table)?;
        let cross = cross_modal_attend(
            tape,
            params,
            &self.layout.cross_attn,
            &self.layout.cross_distil,
            &fused,
            &attn_cfg,
            cfg.fusion.budget,
            derive_seed(opts.seed, 0x200),
            ops.as_mut(),
        );

        let (logits, routing) = if cfg.ablation.no_moe {
            let l = dense_ffn_forward(tape, params, &self.layout.ffn, &self.layout.head, cross.e);
            if let Some(c) = ops.as_mut() {
                c.add("ffn", self.layout.ffn.macs(params, cross.e.shape()[0]));
                c.add("head", params.get(self.layout.head.w).len() as u64);
            }
            (l, None)
        } else {
            let moe_cfg = cfg.moe_config();
            let (probs, decision) = route_tokens(tape, params, &self.layout.moe, cross.e, moe_cfg.k);
            let l = moe_forward(tape, params, &self.layout.moe, &self.layout.head, &moe_cfg, cross.e, probs, &decision, ops.as_mut())?;
            (l, Some(decision))
        };
        Ok(ForwardOutput {
            logits,
            budgets,
            routing,
            cross_trace: cross.trace,
            boundaries: fused.boundaries,
            ops,
        })
    }

    /// Cross-entropy of one sample under the model's own parameters.
    pub fn loss<'t>(&self, tape: &'t Tape, params: &Params, sample: &TokenizedSample, opts: &ForwardOptions) -> Result<Var<'t>> {
        let out = self.forward(tape, params, sample, opts)?;
        cross_entropy(out.logits, sample.label)
    }

    /// Class probabilities and the 1-based arg-max class, evaluated with dropout off.
    pub fn predict(&self, sample: &TokenizedSample, seed: u64) -> Result<(Vec<f64>, usize)> {
        let tape = Tape::new();
        let out = self.forward(&tape, &self.params, sample, &ForwardOptions { seed, ..Default::default() })?;
        let z = out.logits.values();
        if let Some(f) = tape.take_fault() {
            return Err(f);
        }
        let lse = crate::autodiff::log_sum_exp(&z);
        let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let best = (0..p.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        Ok((p, best + 1))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            shape: self.shape.clone(),
            seed: meta.seed,
            epoch: meta.epoch,
            val_loss: meta.val_loss,
            params: self
                .params
                .iter()
                .map(|(n, t)| ParamEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(8 + json.len() + 8 * self.params.total_len());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| MaestroError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| MaestroError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| MaestroError::io(path, e))?;
        let bad = |m: &str| MaestroError::data(format!("{}: {m}", path.display()));
        if bytes.len() < 8 {
            return Err(bad("truncated checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad("unknown checkpoint format"));
        }
        let mut model = Maestro::new(header.config, header.shape)?;
        if header.params.len() != model.params.len() {
            return Err(bad("parameter count mismatch"));
        }
        let mut blob = &bytes[8 + hlen..];
        for (entry, id) in header.params.iter().zip(model.params.ids().collect::<Vec<_>>()) {
            if model.params.name(id) != entry.name || model.params.get(id).shape() != entry.shape.as_slice() {
                return Err(bad(&format!("parameter {} does not match the model layout", entry.name)));
            }
            let n = model.params.get(id).len();
            if blob.len() < 8 * n {
                return Err(bad("truncated parameter blob"));
            }
            let vals: Vec<f64> = blob[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *model.params.get_mut(id) = Tensor::new(entry.shape.clone(), vals)?.requiring_grad();
            blob = &blob[8 * n..];
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after parameter blob"));
        }
        let meta = CheckpointMeta {
            seed: header.seed,
            epoch: header.epoch,
            val_loss: header.val_loss,
        };
        Ok((model, meta))
    }
}

/// Softmax cross-entropy against a 1-based label.
pub fn cross_entropy(logits: Var<'_>, label: usize) -> Result<Var<'_>> {
    let c = logits.numel();
    if label == 0 || label > c {
        return Err(MaestroError::contract(format!("label {label} outside 1..={c}")));
    }
    Ok(logits.cross_entropy(label - 1))
}

const CHECKPOINT_FORMAT: &str = "maestro-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: Config,
    shape: ModelShape,
    seed: u64,
    epoch: usize,
    val_loss: f64,
    params: Vec<ParamEntry>,
}
