//! The two interchangeable feature enhancers.
//!
//! * **Original**: all three levels are flattened (8400 tokens at 640×640)
//!   and every layer runs deformable self-attention over all of them, then
//!   image/text fusion over all of them.
//! * **Efficient**: only P5 is flattened (400 tokens at 640×640); layers use
//!   vanilla self-attention and fuse text with P5 alone. P3/P4 are merged
//!   back in afterwards by [`cross_scale_fusion`].
//!
//! Both run the same text-stream layers (masked self-attention and a FFN).

pub mod cross_scale;
pub mod deformable;
pub mod fusion;
pub mod tokens;

use crate::backbone::FeaturePyramid;
use crate::config::{EnhancerConfig, FusionMode, ModelConfig, Variant, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::flops::{self, Stage};
use crate::layers::{multi_head_attention, AttentionParams, FeedForward, LayerNorm};
use crate::tensor::Tensor;
use crate::text::TextFeatures;
use crate::weights::{Init, ParamSource};

pub use cross_scale::{cross_scale_fusion, CrossScaleWeights, FusionBlock};
pub use deformable::{deformable_sample, deformable_self_attention, DeformableAttentionParams};
pub use fusion::{cross_modality_fusion, FusionParams};
pub use tokens::{flatten_pyramid, sine_position_embedding, Level, LevelRange, TokenizedPyramid};

#[derive(Clone, Debug)]
pub enum ImageAttention {
    Deformable(DeformableAttentionParams),
    Vanilla { attn: AttentionParams, norm: LayerNorm },
}

#[derive(Clone, Debug)]
pub struct EnhancerLayer {
    pub image_attn: ImageAttention,
    pub fusion: FusionParams,
    pub text_attn: AttentionParams,
    pub text_attn_norm: LayerNorm,
    pub image_ffn: FeedForward,
    pub image_ffn_norm: LayerNorm,
    pub text_ffn: FeedForward,
    pub text_ffn_norm: LayerNorm,
}

impl EnhancerLayer {
    /// The deformable attention parameters of an original-variant layer.
    pub fn deformable(&self) -> Option<&DeformableAttentionParams> {
        match &self.image_attn {
            ImageAttention::Deformable(p) => Some(p),
            ImageAttention::Vanilla { .. } => None,
        }
    }

    fn build(src: &mut impl ParamSource, name: &str, cfg: &ModelConfig, variant: Variant) -> Result<Self> {
        let d = cfg.d_model;
        let e = &cfg.enhancer;
        let eps = cfg.layer_norm_eps;
        let image_attn = match variant {
            Variant::Original => ImageAttention::Deformable(DeformableAttentionParams::build(
                src,
                &format!("{name}.deform"),
                d,
                e.heads,
                NUM_LEVELS,
                e.deformable_points,
                eps,
            )?),
            Variant::Efficient => ImageAttention::Vanilla {
                attn: AttentionParams::build(src, &format!("{name}.self_attn"), d, e.heads)?,
                norm: LayerNorm::build(src, &format!("{name}.self_attn_norm"), d, eps)?,
            },
        };
        Ok(Self {
            image_attn,
            fusion: FusionParams::build(src, &format!("{name}.fusion"), d, e.heads, eps)?,
            text_attn: AttentionParams::build(src, &format!("{name}.text_attn"), d, e.heads)?,
            text_attn_norm: LayerNorm::build(src, &format!("{name}.text_attn_norm"), d, eps)?,
            image_ffn: FeedForward::build(src, &format!("{name}.image_ffn"), d, e.ffn_dim)?,
            image_ffn_norm: LayerNorm::build(src, &format!("{name}.image_ffn_norm"), d, eps)?,
            text_ffn: FeedForward::build(src, &format!("{name}.text_ffn"), d, e.ffn_dim)?,
            text_ffn_norm: LayerNorm::build(src, &format!("{name}.text_ffn_norm"), d, eps)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct OriginalEnhancerWeights {
    /// `[3, d]` level embedding.
    pub level_embed: Tensor<f32>,
    pub layers: Vec<EnhancerLayer>,
}

#[derive(Clone, Debug)]
pub struct EfficientEnhancerWeights {
    pub level_embed: Tensor<f32>,
    pub layers: Vec<EnhancerLayer>,
    pub cross_scale: CrossScaleWeights,
}

/// Parameters for both enhancer variants; a weight store always carries both
/// so the variant can be switched at inference time.
#[derive(Clone, Debug)]
pub struct EnhancerWeights {
    pub original: OriginalEnhancerWeights,
    pub efficient: EfficientEnhancerWeights,
}

impl EnhancerWeights {
    pub fn build(src: &mut impl ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        let embed_init = Init::Xavier { fan_in: NUM_LEVELS, fan_out: d };
        let original = OriginalEnhancerWeights {
            level_embed: src.param("enhancer.original.level_embed", &[NUM_LEVELS, d], embed_init)?,
            layers: (0..cfg.enhancer.layers)
                .map(|l| EnhancerLayer::build(src, &format!("enhancer.original.layer{l}"), cfg, Variant::Original))
                .collect::<Result<_>>()?,
        };
        let efficient = EfficientEnhancerWeights {
            level_embed: src.param("enhancer.efficient.level_embed", &[NUM_LEVELS, d], embed_init)?,
            layers: (0..cfg.enhancer.layers)
                .map(|l| EnhancerLayer::build(src, &format!("enhancer.efficient.layer{l}"), cfg, Variant::Efficient))
                .collect::<Result<_>>()?,
            cross_scale: CrossScaleWeights::build(src, "enhancer.efficient.cross_scale", d, cfg.enhancer.fusion_hidden)?,
        };
        Ok(Self { original, efficient })
    }
}

#[derive(Clone, Debug)]
pub struct EnhancedFeatures {
    pub pyramid: FeaturePyramid,
    pub text: TextFeatures,
    /// Number of image tokens the attention and fusion stages processed.
    pub image_tokens: usize,
}

fn check_layers(cfg: &EnhancerConfig, available: usize) -> Result<()> {
    if cfg.layers > available {
        return Err(Error::Config(format!("config asks for {} enhancer layers, weights hold {available}", cfg.layers)));
    }
    Ok(())
}

/// One enhancer layer over a flattened image stream and the text stream.
fn run_layer(
    layer: &EnhancerLayer,
    image: &TokenizedPyramid,
    text: &Tensor<f32>,
    text_feats: &TextFeatures,
    fusion_mode: FusionMode,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut img = flops::in_stage(Stage::EnhancerSelfAttn, || -> Result<_> {
        match &layer.image_attn {
            ImageAttention::Deformable(p) => deformable_self_attention(image, p),
            ImageAttention::Vanilla { attn, norm } => {
                let qk = image.embedded()?;
                let mut x = multi_head_attention(&qk, &qk, &image.tokens, None, attn)?;
                x.add_assign(&image.tokens)?;
                norm.forward(&x)
            }
        }
    })?;
    let mut txt = text.clone();
    flops::in_stage(Stage::EnhancerFusion, || -> Result<()> {
        if fusion_mode == FusionMode::Early {
            (img, txt) = cross_modality_fusion(&img, &txt, &layer.fusion)?;
        }
        let mut t = multi_head_attention(&txt, &txt, &txt, Some(&text_feats.self_mask), &layer.text_attn)?;
        t.add_assign(&txt)?;
        txt = layer.text_attn_norm.forward(&t)?;
        let mut t = layer.text_ffn.forward(&txt)?;
        t.add_assign(&txt)?;
        txt = layer.text_ffn_norm.forward(&t)?;
        Ok(())
    })?;
    flops::in_stage(Stage::EnhancerSelfAttn, || -> Result<()> {
        let mut x = layer.image_ffn.forward(&img)?;
        x.add_assign(&img)?;
        img = layer.image_ffn_norm.forward(&x)?;
        Ok(())
    })?;
    Ok((img, txt))
}

fn run_layers(
    layers: &[EnhancerLayer],
    mut image: TokenizedPyramid,
    text: &TextFeatures,
    fusion_mode: FusionMode,
) -> Result<(TokenizedPyramid, TextFeatures)> {
    let mut txt = text.features.clone();
    for layer in layers {
        let (img, t) = run_layer(layer, &image, &txt, text, fusion_mode)?;
        image = image.with_tokens(img)?;
        txt = t;
    }
    Ok((image, TextFeatures { features: txt, ..text.clone() }))
}

pub fn original_enhancer_forward(
    p: &FeaturePyramid,
    text: &TextFeatures,
    cfg: &EnhancerConfig,
    weights: &OriginalEnhancerWeights,
) -> Result<EnhancedFeatures> {
    if cfg.variant != Variant::Original {
        return Err(Error::Config("original_enhancer_forward called with a non-original config".into()));
    }
    check_layers(cfg, weights.layers.len())?;
    let tokens = flatten_pyramid(p, &Level::ALL, &weights.level_embed)?;
    let image_tokens = tokens.len();
    let (tokens, text) = run_layers(&weights.layers[..cfg.layers], tokens, text, cfg.fusion_mode)?;
    Ok(EnhancedFeatures { pyramid: tokens.unflatten(p)?, text, image_tokens })
}

pub fn efficient_enhancer_forward(
    p: &FeaturePyramid,
    text: &TextFeatures,
    cfg: &EnhancerConfig,
    weights: &EfficientEnhancerWeights,
) -> Result<EnhancedFeatures> {
    if cfg.variant != Variant::Efficient {
        return Err(Error::Config("efficient_enhancer_forward called with a non-efficient config".into()));
    }
    check_layers(cfg, weights.layers.len())?;
    let tokens = flatten_pyramid(p, &[Level::P5], &weights.level_embed)?;
    let image_tokens = tokens.len();
    let (tokens, text) = run_layers(&weights.layers[..cfg.layers], tokens, text, cfg.fusion_mode)?;
    let with_p5 = tokens.unflatten(p)?;
    let pyramid = flops::in_stage(Stage::CrossScaleFusion, || {
        cross_scale_fusion(with_p5.p3(), with_p5.p4(), with_p5.p5(), &weights.cross_scale)
    })?;
    Ok(EnhancedFeatures { pyramid, text, image_tokens })
}

/// Dispatches on `cfg.variant`.
pub fn enhance(p: &FeaturePyramid, text: &TextFeatures, cfg: &EnhancerConfig, weights: &EnhancerWeights) -> Result<EnhancedFeatures> {
    match cfg.variant {
        Variant::Original => original_enhancer_forward(p, text, cfg, &weights.original),
        Variant::Efficient => efficient_enhancer_forward(p, text, cfg, &weights.efficient),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{assemble_prompt, encode_text, tokenize, TextEncoderWeights};
    use crate::weights::Initializer;

    fn small_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.d_model = 16;
        cfg.enhancer.layers = 2;
        cfg.enhancer.ffn_dim = 32;
        cfg.text.ffn_dim = 32;
        cfg
    }

    fn setup(cfg: &ModelConfig) -> (FeaturePyramid, TextEncoderWeights, EnhancerWeights) {
        let mut init = Initializer::new(21, String::new());
        let text = TextEncoderWeights::build(&mut init, cfg).unwrap();
        let enh = EnhancerWeights::build(&mut init, cfg).unwrap();
        let lv = |s: usize| Tensor::from_fn([cfg.d_model, 64 / s, 64 / s], |i| ((i * s) as f32 * 0.011).sin()).unwrap();
        (FeaturePyramid::new(lv(8), lv(16), lv(32)).unwrap(), text, enh)
    }

    fn text_for(phrases: &[&str], w: &TextEncoderWeights) -> TextFeatures {
        encode_text(&tokenize(&assemble_prompt(phrases).unwrap(), 4096).unwrap(), w).unwrap()
    }

    fn cfg_for(base: &ModelConfig, variant: Variant, fusion_mode: FusionMode) -> EnhancerConfig {
        EnhancerConfig { variant, fusion_mode, ..base.enhancer.clone() }
    }

    #[test]
    fn token_counts_per_variant() {
        let cfg = small_config();
        let (p, tw, ew) = setup(&cfg);
        let t = text_for(&["cat", "dog"], &tw);
        let o = enhance(&p, &t, &cfg_for(&cfg, Variant::Original, FusionMode::Early), &ew).unwrap();
        let e = enhance(&p, &t, &cfg_for(&cfg, Variant::Efficient, FusionMode::Early), &ew).unwrap();
        assert_eq!(o.image_tokens, 64 + 16 + 4);
        assert_eq!(e.image_tokens, 4);
        for out in [&o, &e] {
            for l in 0..3 {
                assert_eq!(out.pyramid.levels[l].shape(), p.levels[l].shape());
            }
            assert_eq!(out.text.features.shape(), t.features.shape());
        }
    }

    #[test]
    fn late_fusion_pyramid_ignores_prompt() {
        let cfg = small_config();
        let (p, tw, ew) = setup(&cfg);
        let a = text_for(&["cat", "dog"], &tw);
        let b = text_for(&["fire hydrant", "zebra", "cup"], &tw);
        for variant in [Variant::Original, Variant::Efficient] {
            let c = cfg_for(&cfg, variant, FusionMode::None);
            assert_eq!(enhance(&p, &a, &c, &ew).unwrap().pyramid, enhance(&p, &b, &c, &ew).unwrap().pyramid);
            let c = cfg_for(&cfg, variant, FusionMode::Early);
            assert_ne!(enhance(&p, &a, &c, &ew).unwrap().pyramid, enhance(&p, &b, &c, &ew).unwrap().pyramid);
        }
    }

    #[test]
    fn zero_depth_is_identity() {
        let mut cfg = small_config();
        cfg.enhancer.layers = 0;
        let (p, tw, mut ew) = setup(&cfg);
        ew.efficient.cross_scale.zero_out();
        let t = text_for(&["cat"], &tw);
        for variant in [Variant::Original, Variant::Efficient] {
            let out = enhance(&p, &t, &cfg_for(&cfg, variant, FusionMode::Early), &ew).unwrap();
            assert_eq!(out.pyramid, p);
            assert_eq!(out.text.features, t.features);
        }
    }

    #[test]
    fn phrase_permutation_consistency() {
        let cfg = small_config();
        let (p, tw, ew) = setup(&cfg);
        let a = text_for(&["cat", "red car", "dog"], &tw);
        let b = text_for(&["dog", "cat", "red car"], &tw);
        for variant in [Variant::Original, Variant::Efficient] {
            let c = cfg_for(&cfg, variant, FusionMode::Early);
            let ea = enhance(&p, &a, &c, &ew).unwrap();
            let eb = enhance(&p, &b, &c, &ew).unwrap();
            for l in 0..3 {
                assert!(ea.pyramid.levels[l].max_abs_diff(&eb.pyramid.levels[l]).unwrap() < 1e-5);
            }
            for (jb, ja) in [(0, 2), (1, 0), (2, 1)] {
                let diff = eb.text.phrase_block(jb).unwrap().max_abs_diff(&ea.text.phrase_block(ja).unwrap()).unwrap();
                assert!(diff < 1e-5);
            }
        }
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let cfg = small_config();
        let (p, tw, ew) = setup(&cfg);
        let t = text_for(&["cat"], &tw);
        let c = cfg_for(&cfg, Variant::Efficient, FusionMode::Early);
        assert!(matches!(original_enhancer_forward(&p, &t, &c, &ew.original), Err(Error::Config(_))));
    }
}
