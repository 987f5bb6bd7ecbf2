use crate::backbone::FeaturePyramid;
use crate::config::NUM_LEVELS;
use crate::error::{dim_err, Error, Result};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    P3 = 0,
    P4 = 1,
    P5 = 2,
}

impl Level {
    pub const ALL: [Level; NUM_LEVELS] = [Level::P3, Level::P4, Level::P5];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelRange {
    pub level: Level,
    pub start: usize,
    pub end: usize,
    pub height: usize,
    pub width: usize,
}

/// Pyramid levels flattened into one token sequence, P3 row-major first.
#[derive(Clone, Debug)]
pub struct TokenizedPyramid {
    /// `[N, d]` feature tokens. Embeddings are kept separately so that
    /// flattening and un-flattening are exact inverses.
    pub tokens: Tensor<f32>,
    /// `[N, d]` learned level embedding plus 2-D sinusoidal position.
    pub pos_embed: Tensor<f32>,
    pub level_index: Vec<Level>,
    /// Normalized `(x, y)` cell centers.
    pub positions: Vec<[f32; 2]>,
    pub level_ranges: Vec<LevelRange>,
}

impl TokenizedPyramid {
    pub fn len(&self) -> usize {
        self.tokens.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokens with embeddings added, as used for attention queries and keys.
    pub fn embedded(&self) -> Result<Tensor<f32>> {
        self.tokens.add(&self.pos_embed)
    }

    pub fn with_tokens(&self, tokens: Tensor<f32>) -> Result<Self> {
        if tokens.shape() != self.tokens.shape() {
            return dim_err(format!("replacement tokens {:?} for {:?}", tokens.shape(), self.tokens.shape()));
        }
        Ok(Self { tokens, ..self.clone() })
    }

    /// Writes the tokens back into the corresponding levels of `base`.
    pub fn unflatten(&self, base: &FeaturePyramid) -> Result<FeaturePyramid> {
        let mut levels = base.levels.clone();
        for r in &self.level_ranges {
            if base.level_size(r.level.index()) != (r.height, r.width) {
                return dim_err(format!("level {:?} is {:?} in base, {}x{} in tokens", r.level, base.level_size(r.level.index()), r.height, r.width));
            }
            let block = self.tokens.slice_rows(r.start, r.end)?;
            levels[r.level.index()] = ops::tokens_to_chw(&block, r.height, r.width)?;
        }
        let [p3, p4, p5] = levels;
        FeaturePyramid::new(p3, p4, p5)
    }
}

/// DETR-style 2-D sine embedding of normalized `(x, y)`: the first half of
/// the channels encode `y`, the second half `x`.
pub fn sine_position_embedding(x: f32, y: f32, d: usize, out: &mut [f32]) {
    const TEMPERATURE: f64 = 10000.0;
    let half = d / 2;
    let two_pi = std::f64::consts::TAU;
    for (axis, coord) in [(0usize, y), (1usize, x)] {
        let base = axis * half;
        for i in 0..half {
            let dim_t = TEMPERATURE.powf((2 * (i / 2)) as f64 / half as f64);
            let v = f64::from(coord) * two_pi / dim_t;
            out[base + i] = if i % 2 == 0 { v.sin() as f32 } else { v.cos() as f32 };
        }
    }
}

/// Flattens the requested levels (in P3, P4, P5 order) into tokens.
/// `level_embed` is `[3, d]`, one row per pyramid level.
pub fn flatten_pyramid(p: &FeaturePyramid, levels: &[Level], level_embed: &Tensor<f32>) -> Result<TokenizedPyramid> {
    if levels.is_empty() {
        return Err(Error::Validation("flatten_pyramid needs at least one level".into()));
    }
    let d = p.channels();
    if level_embed.shape() != [NUM_LEVELS, d] {
        return dim_err(format!("level embedding {:?}, expected [{NUM_LEVELS}, {d}]", level_embed.shape()));
    }
    let mut wanted = levels.to_vec();
    wanted.sort();
    wanted.dedup();

    let mut blocks = Vec::with_capacity(wanted.len());
    let mut pos = Vec::new();
    let mut level_index = Vec::new();
    let mut positions = Vec::new();
    let mut level_ranges = Vec::new();
    let mut start = 0;
    let mut row = vec![0.0f32; d];
    for level in wanted {
        let (h, w) = p.level_size(level.index());
        blocks.push(ops::chw_to_tokens(&p.levels[level.index()])?);
        let lvl = level_embed.row(level.index());
        for y in 0..h {
            for x in 0..w {
                let cx = (x as f32 + 0.5) / w as f32;
                let cy = (y as f32 + 0.5) / h as f32;
                sine_position_embedding(cx, cy, d, &mut row);
                pos.extend(row.iter().zip(lvl).map(|(a, b)| a + b));
                positions.push([cx, cy]);
                level_index.push(level);
            }
        }
        level_ranges.push(LevelRange { level, start, end: start + h * w, height: h, width: w });
        start += h * w;
    }
    let tokens = Tensor::concat_rows(&blocks.iter().collect::<Vec<_>>())?;
    let pos_embed = Tensor::new([start, d], pos)?;
    Ok(TokenizedPyramid { tokens, pos_embed, level_index, positions, level_ranges })
}
