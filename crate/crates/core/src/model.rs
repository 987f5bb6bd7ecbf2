//! End-to-end model: weights for every stage plus the predict path.

use crate::backbone::{extract_pyramid, preprocess_image, BackboneWeights, FeaturePyramid, Image, RawImage};
use crate::config::ModelConfig;
use crate::detector::{
    contrastive_logits, decoder_forward, language_guided_query_selection, postprocess, DetectionSet, DetectorWeights,
    QuerySelection,
};
use crate::enhancer::{enhance, flatten_pyramid, EnhancedFeatures, EnhancerWeights, Level};
use crate::error::{Error, Result};
use crate::flops::{self, Stage};
use crate::tensor::Tensor;
use crate::text::{encode_text, tokenize, Prompt, TextEncoderWeights, TextFeatures};
use crate::weights::{Initializer, ParamSource, StoreReader, WeightStore};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub text: TextEncoderWeights,
    pub backbone: BackboneWeights,
    pub enhancer: EnhancerWeights,
    pub detector: DetectorWeights,
}

/// Fresh, deterministically initialized weights for `cfg`.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut init = Initializer::new(seed, cfg.architecture_digest());
    Model::build(&mut init, cfg)?;
    Ok(init.finish())
}

/// Intermediate results of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub text: TextFeatures,
    pub pyramid: FeaturePyramid,
    pub enhanced: EnhancedFeatures,
    pub selection: QuerySelection,
    pub logits: Tensor<f32>,
    pub boxes: Tensor<f32>,
    pub detections: DetectionSet,
}

impl Model {
    fn build(src: &mut impl ParamSource, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            config: cfg.clone(),
            text: TextEncoderWeights::build(src, cfg)?,
            backbone: BackboneWeights::build(src, cfg)?,
            enhancer: EnhancerWeights::build(src, cfg)?,
            detector: DetectorWeights::build(src, cfg)?,
        })
    }

    /// Initializes a model and returns it with its weight store.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(Self, WeightStore)> {
        cfg.validate()?;
        let mut init = Initializer::new(seed, cfg.architecture_digest());
        let model = Self::build(&mut init, cfg)?;
        Ok((model, init.finish()))
    }

    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let digest = cfg.architecture_digest();
        if store.metadata.config_digest != digest {
            return Err(Error::Config(format!(
                "weights were built for config {} but the active config is {digest}",
                store.metadata.config_digest
            )));
        }
        Self::build(&mut StoreReader::new(store), cfg)
    }

    pub fn encode_prompt(&self, prompt: &Prompt) -> Result<TextFeatures> {
        let tp = tokenize(prompt, self.config.text.vocab_size)?;
        encode_text(&tp, &self.text)
    }

    /// Preprocesses, then runs [`Model::predict_image`].
    pub fn predict(&self, raw: &RawImage, prompt: &Prompt) -> Result<DetectionSet> {
        let (img, _) = preprocess_image(raw, self.config.input_size)?;
        self.predict_image(&img, prompt)
    }

    pub fn predict_image(&self, img: &Image, prompt: &Prompt) -> Result<DetectionSet> {
        Ok(self.trace(img, prompt)?.detections)
    }

    /// Backbone and text encoder, then the configured enhancer.
    pub fn enhance(&self, img: &Image, prompt: &Prompt) -> Result<(TextFeatures, FeaturePyramid, EnhancedFeatures)> {
        let (text, pyramid) = flops::in_stage(Stage::Backbone, || -> Result<_> {
            Ok((self.encode_prompt(prompt)?, extract_pyramid(img, &self.backbone)?))
        })?;
        let enhanced = enhance(&pyramid, &text, &self.config.enhancer, &self.enhancer)?;
        Ok((text, pyramid, enhanced))
    }

    pub fn trace(&self, img: &Image, prompt: &Prompt) -> Result<Trace> {
        let cfg = &self.config;
        let (text, pyramid, enhanced) = self.enhance(img, prompt)?;
        if cfg.decoder.layers > self.detector.layers.len() {
            return Err(Error::Config(format!(
                "config asks for {} decoder layers, weights hold {}",
                cfg.decoder.layers,
                self.detector.layers.len()
            )));
        }
        let (selection, memory) = flops::in_stage(Stage::Heads, || -> Result<_> {
            let memory = flatten_pyramid(&enhanced.pyramid, &Level::ALL, &self.detector.level_embed)?;
            let k = cfg.decoder.num_queries.min(memory.len());
            Ok((language_guided_query_selection(&memory, &enhanced.text, k, &self.detector)?, memory))
        })?;
        let decoded = decoder_forward(&selection.queries, &memory, &enhanced.text, &self.detector.layers[..cfg.decoder.layers])?;
        let last = decoded.last();
        let (logits, detections) = flops::in_stage(Stage::Heads, || -> Result<_> {
            let logits = contrastive_logits(&last.content, &enhanced.text)?;
            let detections = postprocess(&logits, &last.anchors, cfg.threshold, cfg.max_detections)?;
            Ok((logits, detections))
        })?;
        Ok(Trace { boxes: last.anchors.clone(), text, pyramid, enhanced, selection, logits, detections })
    }
}
