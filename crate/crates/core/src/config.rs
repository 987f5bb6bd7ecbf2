//! Model hyperparameters. Every field has a desk-scale default; a config can
//! be loaded from JSON with any subset of fields present.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Multi-scale deformable enhancer over P3–P5.
    Original,
    /// Vanilla self-attention and fusion on P5 only, plus cross-scale fusion.
    #[default]
    Efficient,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Variant::Original),
            "efficient" => Ok(Variant::Efficient),
            other => Err(Error::Validation(format!("unknown variant `{other}` (expected original|efficient)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Original => "original",
            Variant::Efficient => "efficient",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Image/text cross-attention inside every enhancer layer.
    #[default]
    Early,
    /// No cross-modality fusion in the enhancer; modalities meet only in the
    /// head.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub vocab_size: usize,
    pub max_phrase_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { vocab_size: 4096, max_phrase_len: 16, layers: 2, heads: 4, ffn_dim: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Two stride-2 stem convolutions (stride 4 after the stem).
    pub stem_channels: [usize; 2],
    /// Widths of the stride-8, 16 and 32 stages.
    pub stage_channels: [usize; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { stem_channels: [16, 32], stage_channels: [64, 96, 128] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerConfig {
    pub variant: Variant,
    pub fusion_mode: FusionMode,
    pub layers: usize,
    pub heads: usize,
    /// Sampling points per head and level (original variant only).
    pub deformable_points: usize,
    pub ffn_dim: usize,
    /// Bottleneck width inside each cross-scale fusion block.
    pub fusion_hidden: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Efficient,
            fusion_mode: FusionMode::Early,
            layers: 3,
            heads: 4,
            deformable_points: 4,
            ffn_dim: 256,
            fusion_hidden: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub num_queries: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { num_queries: 100, layers: 3, heads: 4, ffn_dim: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub input_size: usize,
    pub text: TextConfig,
    pub backbone: BackboneConfig,
    pub enhancer: EnhancerConfig,
    pub decoder: DecoderConfig,
    pub threshold: f32,
    pub max_detections: usize,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            input_size: 640,
            text: TextConfig::default(),
            backbone: BackboneConfig::default(),
            enhancer: EnhancerConfig::default(),
            decoder: DecoderConfig::default(),
            threshold: 0.3,
            max_detections: 100,
            layer_norm_eps: 1e-5,
        }
    }
}

/// Number of pyramid levels (P3, P4, P5).
pub const NUM_LEVELS: usize = 3;
pub const STRIDES: [usize; NUM_LEVELS] = [8, 16, 32];

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model;
        let bad = |msg: String| Err(Error::Config(msg));
        if d == 0 || d % 4 != 0 {
            return bad(format!("d_model must be a positive multiple of 4, got {d}"));
        }
        for (what, heads) in [("text", self.text.heads), ("enhancer", self.enhancer.heads), ("decoder", self.decoder.heads)] {
            if heads == 0 || d % heads != 0 {
                return bad(format!("{what} heads {heads} must divide d_model {d}"));
            }
        }
        if self.text.vocab_size < 256 {
            return bad(format!("vocab_size must be >= 256, got {}", self.text.vocab_size));
        }
        if self.text.max_phrase_len == 0 {
            return bad("max_phrase_len must be >= 1".into());
        }
        if self.enhancer.variant == Variant::Original && self.enhancer.deformable_points == 0 {
            return bad("deformable_points must be >= 1 for the original enhancer".into());
        }
        if self.enhancer.fusion_hidden == 0 || self.enhancer.ffn_dim == 0 || self.decoder.ffn_dim == 0 || self.text.ffn_dim == 0 {
            return bad("hidden widths must be >= 1".into());
        }
        if self.decoder.num_queries == 0 {
            return bad("num_queries must be >= 1".into());
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad(format!("input_size must be a positive multiple of 32, got {}", self.input_size));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    /// Digest of the fields that determine parameter names and shapes.
    /// Runtime switches (variant, fusion mode, depth-independent thresholds)
    /// do not affect it because a weight store always carries both enhancers.
    pub fn architecture_digest(&self) -> String {
        let mut arch = self.clone();
        arch.enhancer.variant = Variant::default();
        arch.enhancer.fusion_mode = FusionMode::default();
        arch.input_size = 0;
        arch.threshold = 0.0;
        arch.max_detections = 0;
        let canonical = serde_json::to_string(&arch).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ModelConfig::from_json(r#"{"d_model": 32, "enhancer": {"variant": "original", "layers": 1}}"#).unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.enhancer.variant, Variant::Original);
        assert_eq!(cfg.enhancer.layers, 1);
        assert_eq!(cfg.enhancer.heads, 4);
        assert_eq!(cfg.decoder.num_queries, 100);
    }

    #[test]
    fn rejects_bad_heads_and_points() {
        let mut cfg = ModelConfig::default();
        cfg.enhancer.heads = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::default();
        cfg.enhancer.variant = Variant::Original;
        cfg.enhancer.deformable_points = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn digest_ignores_runtime_switches() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.enhancer.variant = Variant::Original;
        b.enhancer.fusion_mode = FusionMode::None;
        b.threshold = 0.9;
        assert_eq!(a.architecture_digest(), b.architecture_digest());
        b.enhancer.layers = 1;
        assert_ne!(a.architecture_digest(), b.architecture_digest());
    }
}
