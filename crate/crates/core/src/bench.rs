//! Token counts, FLOP reports and wall-clock latency of the two enhancers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{preprocess_image, Image, RawImage};
use crate::config::{ModelConfig, Variant, NUM_LEVELS, STRIDES};
use crate::enhancer::enhance;
use crate::error::{Error, Result};
use crate::flops::{self, FlopCounts, Stage};
use crate::model::Model;
use crate::text::{assemble_prompt, Prompt};

/// Image tokens per pyramid level for a square input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TokenCounts {
    pub input_size: usize,
    pub per_level: [usize; NUM_LEVELS],
    pub total: usize,
}

impl TokenCounts {
    pub fn p5(&self) -> usize {
        self.per_level[NUM_LEVELS - 1]
    }

    /// Tokens seen by a multi-scale enhancer per token seen by a P5-only one.
    pub fn p5_ratio(&self) -> f64 {
        self.total as f64 / self.p5() as f64
    }
}

pub fn count_tokens(input_size: usize, strides: &[usize; NUM_LEVELS]) -> Result<TokenCounts> {
    let mut per_level = [0; NUM_LEVELS];
    for (n, &s) in per_level.iter_mut().zip(strides) {
        if s == 0 || input_size == 0 || input_size % s != 0 {
            return Err(Error::Validation(format!("input size {input_size} is not divisible by stride {s}")));
        }
        *n = (input_size / s) * (input_size / s);
    }
    Ok(TokenCounts { input_size, per_level, total: per_level.iter().sum() })
}

/// The fixed five-phrase prompt used for FLOP and latency measurements.
pub fn bench_prompt() -> Prompt {
    assemble_prompt(&["person", "car", "dog", "chair", "bottle"]).expect("static prompt")
}

/// Square image of uniform noise.
pub fn random_image(size: usize, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = (0..size * size * 3).map(|_| rng.random::<f32>()).collect();
    RawImage::from_unit_rgb(size, size, rgb).expect("square noise image")
}

fn bench_model(cfg: &ModelConfig, variant: Variant, input_size: usize, seed: u64) -> Result<(Model, Image)> {
    let mut cfg = cfg.clone();
    cfg.enhancer.variant = variant;
    cfg.input_size = input_size;
    let (model, _) = Model::init(&cfg, seed)?;
    let (img, _) = preprocess_image(&random_image(input_size, seed), input_size)?;
    Ok((model, img))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub variant: Variant,
    pub input_size: usize,
    pub stages: Vec<(&'static str, u64)>,
    pub enhancer_total: u64,
    pub total: u64,
}

impl FlopReport {
    pub fn from_counts(variant: Variant, input_size: usize, counts: &FlopCounts) -> Self {
        Self {
            variant,
            input_size,
            stages: counts.iter().map(|(s, n)| (s.name(), n)).collect(),
            enhancer_total: counts.enhancer_total(),
            total: counts.total(),
        }
    }

    pub fn get(&self, stage: Stage) -> u64 {
        self.stages.iter().find(|(n, _)| *n == stage.name()).map_or(0, |s| s.1)
    }
}

/// Counts one full forward pass of `model` on `img` with `prompt`.
pub fn count_flops(model: &Model, img: &Image, prompt: &Prompt) -> Result<FlopReport> {
    let (res, counts) = flops::count(|| model.trace(img, prompt));
    res?;
    Ok(FlopReport::from_counts(model.config.enhancer.variant, img.width(), &counts))
}

/// FLOP report for a freshly initialized model on the bench image and prompt.
pub fn flop_report(cfg: &ModelConfig, variant: Variant, input_size: usize, seed: u64) -> Result<FlopReport> {
    let (model, img) = bench_model(cfg, variant, input_size, seed)?;
    count_flops(&model, &img, &bench_prompt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchScope {
    /// Full predict on a preprocessed image.
    #[default]
    Predict,
    /// The feature enhancer alone, on precomputed backbone and text features.
    Enhancer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub variant: Variant,
    pub input_size: usize,
    pub warmup: usize,
    pub runs: usize,
    pub seed: u64,
    pub scope: BenchScope,
}

impl BenchOptions {
    pub fn new(variant: Variant, input_size: usize) -> Self {
        Self { variant, input_size, warmup: 3, runs: 10, seed: 0, scope: BenchScope::Predict }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub variant: Variant,
    pub input_size: usize,
    pub scope: BenchScope,
    /// Per-run wall time after warmup, in run order.
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub fps: f64,
}

pub const CSV_HEADER: &str = "variant,input_size,runs,median_ms,p10_ms,p90_ms,fps";

impl BenchReport {
    pub fn from_samples(variant: Variant, input_size: usize, scope: BenchScope, samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median_ms = percentile(&sorted, 0.5);
        Self {
            variant,
            input_size,
            scope,
            median_ms,
            p10_ms: percentile(&sorted, 0.1),
            p90_ms: percentile(&sorted, 0.9),
            fps: 1000.0 / median_ms,
            samples_ms,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.2}",
            self.variant,
            self.input_size,
            self.samples_ms.len(),
            self.median_ms,
            self.p10_ms,
            self.p90_ms,
            self.fps
        )
    }
}

/// Linear interpolation between closest ranks of a sorted sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `runs` passes after `warmup` untimed ones on the current thread.
/// Weight initialization and image generation are excluded.
pub fn run_latency_bench(cfg: &ModelConfig, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.runs < 10 || opts.warmup < 3 {
        return Err(Error::Validation(format!(
            "latency bench needs runs >= 10 and warmup >= 3, got runs {} warmup {}",
            opts.runs, opts.warmup
        )));
    }
    let (model, img) = bench_model(cfg, opts.variant, opts.input_size, opts.seed)?;
    let prompt = bench_prompt();
    let mut pass: Box<dyn FnMut() -> Result<()>> = match opts.scope {
        BenchScope::Predict => Box::new(|| model.predict_image(&img, &prompt).map(drop)),
        BenchScope::Enhancer => {
            let text = model.encode_prompt(&prompt)?;
            let pyramid = crate::backbone::extract_pyramid(&img, &model.backbone)?;
            Box::new(move || enhance(&pyramid, &text, &model.config.enhancer, &model.enhancer).map(drop))
        }
    };
    for _ in 0..opts.warmup {
        pass()?;
    }
    let mut samples = Vec::with_capacity(opts.runs);
    for _ in 0..opts.runs {
        let start = Instant::now();
        pass()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchReport::from_samples(opts.variant, opts.input_size, opts.scope, samples))
}

/// Token counts at the default strides.
pub fn default_token_counts(input_size: usize) -> Result<TokenCounts> {
    count_tokens(input_size, &STRIDES)
}
