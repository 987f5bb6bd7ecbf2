//! Image preprocessing and the toy convolutional backbone producing P3/P4/P5.

use crate::config::{ModelConfig, NUM_LEVELS, STRIDES};
use crate::error::{dim_err, Error, Result};
use crate::layers::Conv2d;
use crate::ops;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

pub const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Decoded RGB image with interleaved samples scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
}

impl RawImage {
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return dim_err(format!("{width}x{height} RGB image needs {} bytes, got {}", width * height * 3, bytes.len()));
        }
        Ok(Self { width, height, rgb: bytes.iter().map(|&b| f32::from(b) / 255.0).collect() })
    }

    pub fn from_unit_rgb(width: usize, height: usize, rgb: Vec<f32>) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return dim_err(format!("{width}x{height} RGB image needs {} samples, got {}", width * height * 3, rgb.len()));
        }
        Ok(Self { width, height, rgb })
    }

    fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.rgb[(y * self.width + x) * 3 + c]
    }
}

/// Normalized `[3, S, S]` network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub tensor: Tensor<f32>,
}

impl Image {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        let [c, h, w] = tensor.dims3()?;
        if c != 3 {
            return dim_err(format!("image must have 3 channels, got {c}"));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Validation(format!("image size {h}x{w} is not a multiple of 32")));
        }
        Ok(Self { tensor })
    }

    pub fn height(&self) -> usize {
        self.tensor.dim(1)
    }

    pub fn width(&self) -> usize {
        self.tensor.dim(2)
    }
}

/// Letterboxes `raw` into a `target × target` network input: the longer side
/// is resized to `target` (bilinear), the rest padded with zeros after
/// mean/std normalization. Returns the image and the resize scale.
pub fn preprocess_image(raw: &RawImage, target: usize) -> Result<(Image, f32)> {
    if raw.width == 0 || raw.height == 0 || raw.rgb.is_empty() {
        return Err(Error::Validation("empty image".into()));
    }
    if target == 0 || target % 32 != 0 {
        return Err(Error::Validation(format!("target size {target} is not a positive multiple of 32")));
    }
    let scale = target as f32 / raw.width.max(raw.height) as f32;
    let new_w = ((raw.width as f32 * scale).round() as usize).clamp(1, target);
    let new_h = ((raw.height as f32 * scale).round() as usize).clamp(1, target);
    let mut out = vec![0.0f32; 3 * target * target];
    let sx = raw.width as f32 / new_w as f32;
    let sy = raw.height as f32 / new_h as f32;
    for y in 0..new_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (fy.floor() as usize).min(raw.height - 1);
        let y1 = (y0 + 1).min(raw.height - 1);
        let wy = fy - y0 as f32;
        for x in 0..new_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (fx.floor() as usize).min(raw.width - 1);
            let x1 = (x0 + 1).min(raw.width - 1);
            let wx = fx - x0 as f32;
            for c in 0..3 {
                let top = raw.sample(x0, y0, c) * (1.0 - wx) + raw.sample(x1, y0, c) * wx;
                let bottom = raw.sample(x0, y1, c) * (1.0 - wx) + raw.sample(x1, y1, c) * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                out[(c * target + y) * target + x] = (v - PIXEL_MEAN[c]) / PIXEL_STD[c];
            }
        }
    }
    Ok((Image::new(Tensor::new([3, target, target], out)?)?, scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    /// `[P3, P4, P5]`, each `[d, H/s, W/s]`.
    pub levels: [Tensor<f32>; NUM_LEVELS],
}

impl FeaturePyramid {
    pub fn new(p3: Tensor<f32>, p4: Tensor<f32>, p5: Tensor<f32>) -> Result<Self> {
        let [d, h3, w3] = p3.dims3()?;
        for (l, t) in [&p4, &p5].into_iter().enumerate() {
            let [dl, hl, wl] = t.dims3()?;
            let f = 1 << (l + 1);
            if dl != d || hl * f != h3 || wl * f != w3 {
                return dim_err(format!(
                    "pyramid levels inconsistent: P3 {:?}, P{} {:?}",
                    p3.shape(),
                    l + 4,
                    t.shape()
                ));
            }
        }
        Ok(Self { levels: [p3, p4, p5] })
    }

    pub fn p3(&self) -> &Tensor<f32> {
        &self.levels[0]
    }

    pub fn p4(&self) -> &Tensor<f32> {
        &self.levels[1]
    }

    pub fn p5(&self) -> &Tensor<f32> {
        &self.levels[2]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].dim(0)
    }

    /// `(H, W)` of level `l`.
    pub fn level_size(&self, l: usize) -> (usize, usize) {
        (self.levels[l].dim(1), self.levels[l].dim(2))
    }

    pub fn strides(&self) -> [usize; NUM_LEVELS] {
        STRIDES
    }
}

#[derive(Clone, Debug)]
pub struct BackboneWeights {
    pub stem: [Conv2d; 2],
    pub stages: [Conv2d; 3],
    pub laterals: [Conv2d; NUM_LEVELS],
}

impl BackboneWeights {
    pub fn build(src: &mut impl ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let [s0, s1] = cfg.backbone.stem_channels;
        let [c3, c4, c5] = cfg.backbone.stage_channels;
        let d = cfg.d_model;
        Ok(Self {
            stem: [
                Conv2d::build(src, "backbone.stem0", 3, s0, 3, 2)?,
                Conv2d::build(src, "backbone.stem1", s0, s1, 3, 2)?,
            ],
            stages: [
                Conv2d::build(src, "backbone.stage0", s1, c3, 3, 2)?,
                Conv2d::build(src, "backbone.stage1", c3, c4, 3, 2)?,
                Conv2d::build(src, "backbone.stage2", c4, c5, 3, 2)?,
            ],
            laterals: [
                Conv2d::build(src, "backbone.lateral3", c3, d, 1, 1)?,
                Conv2d::build(src, "backbone.lateral4", c4, d, 1, 1)?,
                Conv2d::build(src, "backbone.lateral5", c5, d, 1, 1)?,
            ],
        })
    }
}

pub fn extract_pyramid(img: &Image, weights: &BackboneWeights) -> Result<FeaturePyramid> {
    let (h, w) = (img.height(), img.width());
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Validation(format!("image size {h}x{w} is not a multiple of 32")));
    }
    let mut x = img.tensor.clone();
    for conv in &weights.stem {
        x = ops::gelu_tensor(&conv.forward(&x)?);
    }
    let mut outs = Vec::with_capacity(NUM_LEVELS);
    for (stage, lateral) in weights.stages.iter().zip(&weights.laterals) {
        x = ops::gelu_tensor(&stage.forward(&x)?);
        outs.push(lateral.forward(&x)?);
    }
    let [p3, p4, p5]: [Tensor<f32>; 3] = outs.try_into().expect("three levels");
    FeaturePyramid::new(p3, p4, p5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Initializer;

    fn weights() -> BackboneWeights {
        BackboneWeights::build(&mut Initializer::new(11, String::new()), &ModelConfig::default()).unwrap()
    }

    fn noise_image(w: usize, h: usize) -> RawImage {
        let bytes: Vec<u8> = (0..w * h * 3).map(|i| ((i * 2654435761usize) >> 7) as u8).collect();
        RawImage::from_rgb8(w, h, &bytes).unwrap()
    }

    #[test]
    fn preprocess_shapes_and_padding() {
        let (img, scale) = preprocess_image(&noise_image(640, 640), 640).unwrap();
        assert_eq!(img.tensor.shape(), &[3, 640, 640]);
        assert_eq!(scale, 1.0);

        let (img, _) = preprocess_image(&noise_image(500, 300), 640).unwrap();
        assert_eq!(img.tensor.shape(), &[3, 640, 640]);
        // 300 * 640/500 = 384 rows of content, zero padding below
        assert_ne!(img.tensor.at(&[0, 383, 10]), 0.0);
        assert!((384..640).all(|y| (0..640).all(|x| img.tensor.at(&[1, y, x]) == 0.0)));

        assert!(matches!(preprocess_image(&RawImage { width: 0, height: 0, rgb: vec![] }, 640), Err(Error::Validation(_))));
    }

    #[test]
    fn mean_colored_image_normalizes_to_zero() {
        let rgb: Vec<f32> = (0..64 * 48).flat_map(|_| PIXEL_MEAN).collect();
        let raw = RawImage::from_unit_rgb(64, 48, rgb).unwrap();
        let (img, _) = preprocess_image(&raw, 64).unwrap();
        assert!(img.tensor.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn pyramid_shapes() {
        let w = weights();
        for size in [64usize, 256, 640] {
            let img = Image::new(Tensor::from_fn([3, size, size], |i| ((i % 97) as f32) / 97.0 - 0.5).unwrap()).unwrap();
            let p = extract_pyramid(&img, &w).unwrap();
            for (l, s) in STRIDES.iter().enumerate() {
                assert_eq!(p.levels[l].shape(), &[64, size / s, size / s]);
            }
        }
    }

    #[test]
    fn pyramid_is_deterministic() {
        let w = weights();
        let (img, _) = preprocess_image(&noise_image(128, 96), 128).unwrap();
        assert_eq!(extract_pyramid(&img, &w).unwrap(), extract_pyramid(&img, &w).unwrap());
    }

    #[test]
    fn rejects_non_multiple_of_32() {
        assert!(matches!(Image::new(Tensor::zeros([3, 48, 64]).unwrap()), Err(Error::Validation(_))));
    }
}
