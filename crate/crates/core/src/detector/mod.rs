//! Language-guided query selection, the query decoder, phrase
//! classification and post-processing.

pub mod decoder;
pub mod postprocess;

use crate::config::{ModelConfig, NUM_LEVELS};
use crate::enhancer::TokenizedPyramid;
use crate::error::{dim_err, Error, Result};
use crate::flops;
use crate::layers::Linear;
use crate::ops::{self, dot};
use crate::tensor::Tensor;
use crate::text::TextFeatures;
use crate::weights::{Init, ParamSource};

pub use decoder::{decoder_forward, refine_anchors, BoxHead, DecoderLayer, DecoderOutput, LOGIT_LIMIT};
pub use postprocess::{postprocess, Detection, DetectionSet};

/// Decoder queries: content features and normalized `cxcywh` anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub content: Tensor<f32>,
    pub anchors: Tensor<f32>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.content.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Initial anchor side per level before the learned offset: P3 0.05, P4 0.1,
/// P5 0.2.
pub const BASE_ANCHOR_SIZE: f32 = 0.05;

#[derive(Clone, Debug)]
pub struct DetectorWeights {
    /// `[3, d]` level embedding for the decoder's image memory.
    pub level_embed: Tensor<f32>,
    pub query_proj: Linear,
    /// Per-level offset to the initial anchor size, in logit space.
    pub anchor_size_bias: Tensor<f32>,
    pub layers: Vec<DecoderLayer>,
}

impl DetectorWeights {
    pub fn build(src: &mut impl ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            level_embed: src.param("detector.level_embed", &[NUM_LEVELS, d], Init::Xavier { fan_in: NUM_LEVELS, fan_out: d })?,
            query_proj: Linear::build(src, "detector.query_proj", d, d)?,
            anchor_size_bias: src.param("detector.anchor_size.bias", &[NUM_LEVELS], Init::Zeros)?,
            layers: (0..cfg.decoder.layers)
                .map(|l| DecoderLayer::build(src, &format!("detector.layer{l}"), cfg))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct QuerySelection {
    pub queries: QuerySet,
    /// Selected token indices, best first.
    pub indices: Vec<usize>,
    /// Selection score of each selected token.
    pub scores: Vec<f32>,
}

/// Scores every image token by its best dot product with any text token and
/// turns the top `k` into decoder queries.
pub fn language_guided_query_selection(
    image: &TokenizedPyramid,
    text: &TextFeatures,
    k: usize,
    weights: &DetectorWeights,
) -> Result<QuerySelection> {
    let [n, d] = image.tokens.dims2()?;
    let [t, dt] = text.features.dims2()?;
    if d != dt {
        return dim_err(format!("query selection: image width {d}, text width {dt}"));
    }
    if k == 0 || k > n {
        return Err(Error::Validation(format!("cannot select {k} queries from {n} tokens")));
    }
    let scores: Vec<f32> = (0..n)
        .map(|i| {
            let row = image.tokens.row(i);
            (0..t).map(|j| dot(row, text.features.row(j))).fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    flops::record(flops::matmul_flops(n, d, t));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);

    let content = weights.query_proj.forward(&image.tokens.select_rows(&order)?)?;
    let eps = 1e-5;
    let mut anchors = Vec::with_capacity(k * 4);
    for &i in &order {
        let level = image.level_index[i].index();
        let base = BASE_ANCHOR_SIZE * (1 << level) as f32;
        let size = ops::sigmoid(ops::inverse_sigmoid(base, eps) + weights.anchor_size_bias.data()[level]);
        let [x, y] = image.positions[i];
        anchors.extend_from_slice(&[x, y, size, size]);
    }
    Ok(QuerySelection {
        queries: QuerySet { content, anchors: Tensor::new([k, 4], anchors)? },
        scores: order.iter().map(|&i| scores[i]).collect(),
        indices: order,
    })
}

/// `logit[k][j] = max_{t in span j} <content_k, text_t> / sqrt(d)`.
pub fn contrastive_logits(content: &Tensor<f32>, text: &TextFeatures) -> Result<Tensor<f32>> {
    let [k, d] = content.dims2()?;
    if text.features.dim(1) != d {
        return dim_err(format!("logits: content {:?}, text {:?}", content.shape(), text.features.shape()));
    }
    if text.phrase_spans.is_empty() {
        return Err(Error::Validation("text has no phrase spans".into()));
    }
    let p = text.num_phrases();
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = Vec::with_capacity(k * p);
    for q in 0..k {
        let row = content.row(q);
        for &(s, e) in &text.phrase_spans {
            let best = (s..e).map(|t| dot(row, text.features.row(t))).fold(f32::NEG_INFINITY, f32::max);
            out.push(best * scale);
        }
    }
    flops::record(flops::matmul_flops(k, d, text.num_tokens()));
    Tensor::new([k, p], out)
}
