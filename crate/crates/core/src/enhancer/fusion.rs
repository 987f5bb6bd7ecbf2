//! Bidirectional image/text cross-attention.

use crate::error::{dim_err, Result};
use crate::layers::{multi_head_attention, AttentionParams, LayerNorm};
use crate::tensor::Tensor;
use crate::weights::ParamSource;

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub image_norm: LayerNorm,
    pub text_norm: LayerNorm,
    /// Image queries attending to text.
    pub image_to_text: AttentionParams,
    /// Text queries attending to image tokens.
    pub text_to_image: AttentionParams,
}

impl FusionParams {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, heads: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            image_norm: LayerNorm::build(src, &format!("{name}.image_norm"), d, eps)?,
            text_norm: LayerNorm::build(src, &format!("{name}.text_norm"), d, eps)?,
            image_to_text: AttentionParams::build(src, &format!("{name}.i2t"), d, heads)?,
            text_to_image: AttentionParams::build(src, &format!("{name}.t2i"), d, heads)?,
        })
    }
}

/// Both directions read the normalized inputs and add their update to the
/// un-normalized stream, so zeroed value/output projections make the block a
/// pure residual.
pub fn cross_modality_fusion(
    image: &Tensor<f32>,
    text: &Tensor<f32>,
    params: &FusionParams,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if image.last_dim() != text.last_dim() {
        return dim_err(format!("fusion: image {:?} and text {:?} widths differ", image.shape(), text.shape()));
    }
    let img_n = params.image_norm.forward(image)?;
    let txt_n = params.text_norm.forward(text)?;
    let mut image_out = image.clone();
    image_out.add_assign(&multi_head_attention(&img_n, &txt_n, &txt_n, None, &params.image_to_text)?)?;
    let mut text_out = text.clone();
    text_out.add_assign(&multi_head_attention(&txt_n, &img_n, &img_n, None, &params.text_to_image)?)?;
    Ok((image_out, text_out))
}
