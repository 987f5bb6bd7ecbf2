//! Query decoder with iterative box refinement.

use crate::config::ModelConfig;
use crate::enhancer::{sine_position_embedding, TokenizedPyramid};
use crate::error::{dim_err, Result};
use crate::flops::{self, Stage};
use crate::layers::{multi_head_attention, AttentionParams, FeedForward, LayerNorm, Linear};
use crate::ops;
use crate::tensor::Tensor;
use crate::text::TextFeatures;
use crate::weights::ParamSource;

use super::QuerySet;

/// Refined box logits are clamped to this magnitude so that every anchor
/// coordinate stays strictly inside `(0, 1)` in f32.
pub const LOGIT_LIMIT: f32 = 15.0;

#[derive(Clone, Debug)]
pub struct BoxHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BoxHead {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize) -> Result<Self> {
        Ok(Self { fc1: Linear::build(src, &format!("{name}.fc1"), d, d)?, fc2: Linear::build(src, &format!("{name}.fc2"), d, 4)? })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.fc2.forward(&ops::gelu_tensor(&self.fc1.forward(x)?))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub self_norm: LayerNorm,
    pub image_attn: AttentionParams,
    pub image_norm: LayerNorm,
    pub text_attn: AttentionParams,
    pub text_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
    pub box_head: BoxHead,
}

impl DecoderLayer {
    pub fn build(src: &mut impl ParamSource, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        let h = cfg.decoder.heads;
        let eps = cfg.layer_norm_eps;
        Ok(Self {
            self_attn: AttentionParams::build(src, &format!("{name}.self_attn"), d, h)?,
            self_norm: LayerNorm::build(src, &format!("{name}.self_norm"), d, eps)?,
            image_attn: AttentionParams::build(src, &format!("{name}.image_attn"), d, h)?,
            image_norm: LayerNorm::build(src, &format!("{name}.image_norm"), d, eps)?,
            text_attn: AttentionParams::build(src, &format!("{name}.text_attn"), d, h)?,
            text_norm: LayerNorm::build(src, &format!("{name}.text_norm"), d, eps)?,
            ffn: FeedForward::build(src, &format!("{name}.ffn"), d, cfg.decoder.ffn_dim)?,
            ffn_norm: LayerNorm::build(src, &format!("{name}.ffn_norm"), d, eps)?,
            box_head: BoxHead::build(src, &format!("{name}.box_head"), d)?,
        })
    }
}

/// Per-layer outputs; `layers[i]` is the query set after layer `i`.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub initial: QuerySet,
    pub layers: Vec<QuerySet>,
}

impl DecoderOutput {
    /// Output of the last layer, or the initial queries for a zero-depth
    /// decoder.
    pub fn last(&self) -> &QuerySet {
        self.layers.last().unwrap_or(&self.initial)
    }

    /// `(layers, K, d)` content and `(layers, K, 4)` boxes.
    pub fn stacked(&self) -> Result<Option<(Tensor<f32>, Tensor<f32>)>> {
        if self.layers.is_empty() {
            return Ok(None);
        }
        let (l, k, d) = (self.layers.len(), self.initial.len(), self.initial.content.dim(1));
        let content = self.layers.iter().flat_map(|q| q.content.data().iter().copied()).collect();
        let boxes = self.layers.iter().flat_map(|q| q.anchors.data().iter().copied()).collect();
        Ok(Some((Tensor::new([l, k, d], content)?, Tensor::new([l, k, 4], boxes)?)))
    }
}

fn anchor_pos(anchors: &Tensor<f32>, d: usize) -> Result<Tensor<f32>> {
    let k = anchors.dim(0);
    let mut out = vec![0.0f32; k * d];
    for (i, a) in anchors.data().chunks_exact(4).enumerate() {
        sine_position_embedding(a[0], a[1], d, &mut out[i * d..(i + 1) * d]);
    }
    Tensor::new([k, d], out)
}

fn residual_norm(x: &Tensor<f32>, update: Tensor<f32>, norm: &LayerNorm) -> Result<Tensor<f32>> {
    let mut y = update;
    y.add_assign(x)?;
    norm.forward(&y)
}

/// Refines `anchors` additively in inverse-sigmoid space.
pub fn refine_anchors(anchors: &Tensor<f32>, delta: &Tensor<f32>) -> Result<Tensor<f32>> {
    if anchors.shape() != delta.shape() {
        return dim_err(format!("anchors {:?} and deltas {:?}", anchors.shape(), delta.shape()));
    }
    let eps = 1e-5;
    let data = anchors
        .data()
        .iter()
        .zip(delta.data())
        .map(|(&a, &dv)| ops::sigmoid((ops::inverse_sigmoid(a, eps) + dv).clamp(-LOGIT_LIMIT, LOGIT_LIMIT)))
        .collect();
    Tensor::new(anchors.shape().to_vec(), data)
}

pub fn decoder_forward(
    q: &QuerySet,
    image: &TokenizedPyramid,
    text: &TextFeatures,
    layers: &[DecoderLayer],
) -> Result<DecoderOutput> {
    let d = q.content.dim(1);
    if image.tokens.dim(1) != d || text.features.dim(1) != d {
        return dim_err(format!(
            "decoder: queries of width {d}, image {:?}, text {:?}",
            image.tokens.shape(),
            text.features.shape()
        ));
    }
    let memory_keys = image.embedded()?;
    let mut content = q.content.clone();
    let mut anchors = q.anchors.clone();
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        flops::in_stage(Stage::Decoder, || -> Result<()> {
            let pos = anchor_pos(&anchors, d)?;
            let qk = content.add(&pos)?;
            content = residual_norm(&content, multi_head_attention(&qk, &qk, &content, None, &layer.self_attn)?, &layer.self_norm)?;
            let qi = content.add(&pos)?;
            content = residual_norm(
                &content,
                multi_head_attention(&qi, &memory_keys, &image.tokens, None, &layer.image_attn)?,
                &layer.image_norm,
            )?;
            content = residual_norm(
                &content,
                multi_head_attention(&content, &text.features, &text.features, None, &layer.text_attn)?,
                &layer.text_norm,
            )?;
            content = residual_norm(&content, layer.ffn.forward(&content)?, &layer.ffn_norm)?;
            Ok(())
        })?;
        anchors = flops::in_stage(Stage::Heads, || refine_anchors(&anchors, &layer.box_head.forward(&content)?))?;
        out.push(QuerySet { content: content.clone(), anchors: anchors.clone() });
    }
    Ok(DecoderOutput { initial: q.clone(), layers: out })
}
