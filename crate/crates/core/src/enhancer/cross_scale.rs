//! Convolutional top-down / bottom-up merge of P3 and P4 with the enhanced
//! P5.
//!
//! Every merge is `residual + conv3x3(gelu(conv1x1(concat(other, residual))))`
//! with a bottleneck of `fusion_hidden` channels, so zeroed convolutions
//! reduce the module to the identity.

use crate::backbone::FeaturePyramid;
use crate::error::{dim_err, Result};
use crate::layers::Conv2d;
use crate::ops;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub reduce: Conv2d,
    pub mix: Conv2d,
}

impl FusionBlock {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            reduce: Conv2d::build(src, &format!("{name}.reduce"), 2 * d, hidden, 1, 1)?,
            mix: Conv2d::build(src, &format!("{name}.mix"), hidden, d, 3, 1)?,
        })
    }

    pub fn forward(&self, residual: &Tensor<f32>, other: &Tensor<f32>) -> Result<Tensor<f32>> {
        let cat = ops::concat_channels(other, residual)?;
        let h = ops::gelu_tensor(&self.reduce.forward(&cat)?);
        let mut out = self.mix.forward(&h)?;
        out.add_assign(residual)?;
        Ok(out)
    }

    pub fn zero_out(&mut self) {
        self.reduce.zero_out();
        self.mix.zero_out();
    }
}

#[derive(Clone, Debug)]
pub struct CrossScaleWeights {
    pub top_down4: FusionBlock,
    pub top_down3: FusionBlock,
    pub down3: Conv2d,
    pub bottom_up4: FusionBlock,
    pub down4: Conv2d,
    pub bottom_up5: FusionBlock,
}

impl CrossScaleWeights {
    pub fn build(src: &mut impl ParamSource, name: &str, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            top_down4: FusionBlock::build(src, &format!("{name}.td4"), d, hidden)?,
            top_down3: FusionBlock::build(src, &format!("{name}.td3"), d, hidden)?,
            down3: Conv2d::build(src, &format!("{name}.down3"), d, d, 3, 2)?,
            bottom_up4: FusionBlock::build(src, &format!("{name}.bu4"), d, hidden)?,
            down4: Conv2d::build(src, &format!("{name}.down4"), d, d, 3, 2)?,
            bottom_up5: FusionBlock::build(src, &format!("{name}.bu5"), d, hidden)?,
        })
    }

    pub fn zero_out(&mut self) {
        self.top_down4.zero_out();
        self.top_down3.zero_out();
        self.down3.zero_out();
        self.bottom_up4.zero_out();
        self.down4.zero_out();
        self.bottom_up5.zero_out();
    }
}

pub fn cross_scale_fusion(
    p3: &Tensor<f32>,
    p4: &Tensor<f32>,
    p5: &Tensor<f32>,
    weights: &CrossScaleWeights,
) -> Result<FeaturePyramid> {
    let [d, h3, w3] = p3.dims3()?;
    if p4.shape() != [d, h3 / 2, w3 / 2] || p5.shape() != [d, h3 / 4, w3 / 4] || h3 % 4 != 0 || w3 % 4 != 0 {
        return dim_err(format!(
            "cross-scale fusion: inconsistent levels {:?} / {:?} / {:?}",
            p3.shape(),
            p4.shape(),
            p5.shape()
        ));
    }
    let td4 = weights.top_down4.forward(p4, &ops::upsample_nearest2x(p5)?)?;
    let out3 = weights.top_down3.forward(p3, &ops::upsample_nearest2x(&td4)?)?;
    let out4 = weights.bottom_up4.forward(&td4, &weights.down3.forward(&out3)?)?;
    let out5 = weights.bottom_up5.forward(p5, &weights.down4.forward(&out4)?)?;
    FeaturePyramid::new(out3, out4, out5)
}
