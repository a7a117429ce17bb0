//! Run configuration, one TOML file with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::error::{MaestroError, Result};
use crate::gate::GateConfig;
use crate::moe::MoeConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct Config {
    pub seed: u64,
    pub sax: SaxSection,
    pub gate: GateSection,
    pub attn: AttnSection,
    pub encoder: EncoderSection,
    pub fusion: FusionSection,
    pub moe: MoeSection,
    pub train: TrainSection,
    pub curriculum: CurriculumSection,
    pub ablation: AblationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaxSection {
    pub alpha: usize,
    /// Samples per PAA segment: `W = ceil(T / compression)`.
    pub compression: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub hidden: usize,
    pub beta_max: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttnSection {
    pub heads: usize,
    pub dropout: f64,
    /// Must equal `encoder.d_model` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub layers: usize,
    pub d_model: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoeSection {
    pub experts: usize,
    pub k: usize,
    /// Defaults to `4 * d_model`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    pub experts_emit_logits: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip_norm: f64,
    /// Only epochs after the curriculum ramp may become the best checkpoint
    /// or exhaust patience.
    pub select_after_ramp: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub p_max: f64,
    pub warmup: usize,
    pub max: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub no_sax: bool,
    pub no_modality_embedding: bool,
    pub no_dropout: bool,
    pub no_adaptive_budget: bool,
    pub no_moe: bool,
}

impl Default for SaxSection {
    fn default() -> Self {
        Self {
            alpha: 20,
            compression: 2,
        }
    }
}

impl Default for GateSection {
    fn default() -> Self {
        let g = GateConfig::default();
        Self {
            hidden: g.hidden,
            beta_max: g.beta_max,
            eps: g.eps,
        }
    }
}

impl Default for AttnSection {
    fn default() -> Self {
        Self {
            heads: 4,
            dropout: 0.05,
            d_model: None,
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            layers: 1,
            d_model: 64,
        }
    }
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { budget: 1.0 }
    }
}

impl Default for MoeSection {
    fn default() -> Self {
        Self {
            experts: 4,
            k: 1,
            d_ff: None,
            experts_emit_logits: false,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 100,
            batch_size: 32,
            patience: 10,
            clip_norm: 5.0,
            select_after_ramp: false,
        }
    }
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            p_max: 0.4,
            warmup: 10,
            max: 100,
        }
    }
}


impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| MaestroError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MaestroError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MaestroError::Config(m));
        if self.sax.alpha < 2 || self.sax.alpha > u16::MAX as usize - 1 {
            return bad(format!("sax.alpha must be in [2, 65534], got {}", self.sax.alpha));
        }
        if self.sax.compression == 0 {
            return bad("sax.compression must be >= 1".into());
        }
        self.gate_config().validate()?;
        let d = self.encoder.d_model;
        if d == 0 || self.attn.heads == 0 || !d.is_multiple_of(self.attn.heads) {
            return bad(format!("encoder.d_model {d} must be a positive multiple of attn.heads {}", self.attn.heads));
        }
        if let Some(ad) = self.attn.d_model {
            if ad != d {
                return bad(format!("attn.d_model {ad} differs from encoder.d_model {d}"));
            }
        }
        if !(0.0..1.0).contains(&self.attn.dropout) {
            return bad("attn.dropout must lie in [0, 1)".into());
        }
        if self.encoder.layers == 0 {
            return bad("encoder.layers must be >= 1".into());
        }
        if !(self.fusion.budget >= 1.0) {
            return bad("fusion.budget must be >= 1".into());
        }
        self.moe_config().validate()?;
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad("train.lr must be finite and non-negative".into());
        }
        if t.batch_size == 0 || t.max_epochs == 0 {
            return bad("train.batch_size and train.max_epochs must be >= 1".into());
        }
        if !(t.clip_norm > 0.0) {
            return bad("train.clip_norm must be positive".into());
        }
        let c = &self.curriculum;
        if !(0.0..=1.0).contains(&c.p_max) || c.warmup >= c.max {
            return bad("curriculum needs p_max in [0, 1] and warmup < max".into());
        }
        Ok(())
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            hidden: self.gate.hidden,
            beta_max: self.gate.beta_max,
            eps: self.gate.eps,
        }
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig::new(self.encoder.d_model, self.attn.heads, self.attn.dropout)
    }

    pub fn moe_config(&self) -> MoeConfig {
        MoeConfig {
            experts: self.moe.experts,
            k: self.moe.k,
            d_ff: self.moe.d_ff.unwrap_or(4 * self.encoder.d_model),
            experts_emit_logits: self.moe.experts_emit_logits,
        }
    }

    /// PAA length for a series of `t` samples.
    pub fn word_length(&self, t: usize) -> usize {
        t.div_ceil(self.sax.compression).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.gate.beta_max, 5.0);
        assert_eq!((c.moe.experts, c.moe.k), (4, 1));
        assert_eq!(c.moe_config().d_ff, 256);
        assert_eq!(c.word_length(128), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[gate]\nhiden = 3\n").is_err());
        assert!(Config::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[moe]\nk = 5\n").is_err());
        assert!(Config::from_toml("[encoder]\nd_model = 10\n[attn]\nheads = 4\n").is_err());
        assert!(Config::from_toml("[attn]\nd_model = 32\n").is_err());
        assert!(Config::from_toml("[curriculum]\nwarmup = 100\nmax = 100\n").is_err());
        assert!(Config::from_toml("[gate]\neps = 0.5\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config { seed: 7, ..Default::default() };
        c.ablation.no_moe = true;
        c.moe.d_ff = Some(12);
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }
}
