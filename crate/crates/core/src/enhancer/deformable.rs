//! Multi-scale deformable self-attention.
//!
//! Each query predicts, per head, `levels × points` sampling offsets around
//! its reference point and a softmax over those samples. Values are sampled
//! bilinearly from each level's value map; offsets are in units of that
//! level's cells.

use crate::error::{dim_err, Error, Result};
use crate::flops;
use crate::layers::{LayerNorm, Linear};
use crate::ops;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

use super::tokens::TokenizedPyramid;

#[derive(Clone, Debug)]
pub struct DeformableAttentionParams {
    pub value: Linear,
    /// `d → heads·levels·points·2` offsets, `(dx, dy)` innermost.
    pub offsets: Linear,
    /// `d → heads·levels·points` sampling logits.
    pub weights: Linear,
    pub output: Linear,
    pub norm: LayerNorm,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
}

impl DeformableAttentionParams {
    pub fn build(
        src: &mut impl ParamSource,
        name: &str,
        d: usize,
        heads: usize,
        levels: usize,
        points: usize,
        eps: f64,
    ) -> Result<Self> {
        if points == 0 {
            return Err(Error::Config("deformable attention needs at least one point".into()));
        }
        let samples = heads * levels * points;
        Ok(Self {
            value: Linear::build(src, &format!("{name}.value"), d, d)?,
            offsets: Linear::build(src, &format!("{name}.offsets"), d, samples * 2)?,
            weights: Linear::build(src, &format!("{name}.weights"), d, samples)?,
            output: Linear::build(src, &format!("{name}.output"), d, d)?,
            norm: LayerNorm::build(src, &format!("{name}.norm"), d, eps)?,
            heads,
            levels,
            points,
        })
    }
}

/// Sampled and weighted values before the output projection, `[N, d]`.
pub fn deformable_sample(tp: &TokenizedPyramid, params: &DeformableAttentionParams) -> Result<Tensor<f32>> {
    let (heads, levels, points) = (params.heads, params.levels, params.points);
    if points == 0 {
        return Err(Error::Config("deformable attention needs at least one point".into()));
    }
    if tp.level_ranges.len() != levels {
        return dim_err(format!("attention configured for {levels} levels, pyramid has {}", tp.level_ranges.len()));
    }
    let [n, d] = tp.tokens.dims2()?;
    if d % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide width {d}")));
    }
    let dh = d / heads;
    let query = tp.embedded()?;
    let value = params.value.forward(&tp.tokens)?;
    let offsets = params.offsets.forward(&query)?;
    let mut weights = params.weights.forward(&query)?;
    let per_head = levels * points;
    weights.data_mut().chunks_exact_mut(per_head).for_each(ops::softmax_inplace);

    let mut out = vec![0.0f32; n * d];
    let vals = value.data();
    for q in 0..n {
        let [rx, ry] = tp.positions[q];
        let off = offsets.row(q);
        let wts = weights.row(q);
        let dst = &mut out[q * d..(q + 1) * d];
        for h in 0..heads {
            let acc = &mut dst[h * dh..(h + 1) * dh];
            for (l, r) in tp.level_ranges.iter().enumerate() {
                let block = &vals[r.start * d..r.end * d];
                for k in 0..points {
                    let s = (h * levels + l) * points + k;
                    let x = rx + off[2 * s] / r.width as f32;
                    let y = ry + off[2 * s + 1] / r.height as f32;
                    ops::sample_tokens_acc(block, r.height, r.width, d, h * dh, x, y, wts[s], acc);
                }
            }
        }
    }
    flops::record(flops::bilinear_flops(n * heads * per_head, dh));
    Ok(Tensor::from_parts(vec![n, d], out))
}

/// Deformable self-attention block: sample, project, add the residual and
/// layer-normalize.
pub fn deformable_self_attention(tp: &TokenizedPyramid, params: &DeformableAttentionParams) -> Result<Tensor<f32>> {
    let sampled = deformable_sample(tp, params)?;
    let mut x = params.output.forward(&sampled)?;
    x.add_assign(&tp.tokens)?;
    params.norm.forward(&x)
}
