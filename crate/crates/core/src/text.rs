//! Prompts, hash tokenization, phrase masks and the toy text encoder.
//!
//! Every phrase is tokenized and encoded in isolation: positions restart at
//! zero per phrase and self-attention is block-diagonal over phrase spans, so
//! reordering phrases only reorders the per-phrase feature blocks.

use crate::config::{ModelConfig, TextConfig};
use crate::error::{Error, Result};
use crate::layers::{multi_head_attention, AttentionParams, AttnMask, FeedForward, LayerNorm};
use crate::tensor::Tensor;
use crate::weights::{Init, ParamSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    Categories,
    Caption,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    mode: PromptMode,
    phrases: Vec<String>,
    caption: Option<String>,
}

/// Builds a categories-mode prompt. Entries are trimmed and must be
/// non-empty.
pub fn assemble_prompt<S: AsRef<str>>(categories: &[S]) -> Result<Prompt> {
    if categories.is_empty() {
        return Err(Error::Validation("prompt needs at least one category".into()));
    }
    let phrases = categories
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = c.as_ref().trim();
            if c.is_empty() {
                Err(Error::Validation(format!("category {i} is empty")))
            } else {
                Ok(c.to_string())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prompt { mode: PromptMode::Categories, phrases, caption: None })
}

impl Prompt {
    /// Parses the rendered `"a. b. c"` form.
    pub fn parse_categories(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split('.').map(str::trim).filter(|s| !s.is_empty()).collect();
        assemble_prompt(&parts)
    }

    /// Caption-mode prompt whose phrases are the given character ranges
    /// (half-open, in `char` units) of `caption`.
    pub fn from_caption(caption: &str, spans: &[(usize, usize)]) -> Result<Self> {
        if spans.is_empty() {
            return Err(Error::Validation("caption prompt needs at least one phrase span".into()));
        }
        let chars: Vec<char> = caption.chars().collect();
        let phrases = spans
            .iter()
            .map(|&(s, e)| {
                if s >= e || e > chars.len() {
                    return Err(Error::Validation(format!("span ({s}, {e}) invalid for caption of {} chars", chars.len())));
                }
                let p: String = chars[s..e].iter().collect();
                if p.trim().is_empty() {
                    return Err(Error::Validation(format!("span ({s}, {e}) is blank")));
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prompt { mode: PromptMode::Caption, phrases, caption: Some(caption.to_string()) })
    }

    pub fn mode(&self) -> PromptMode {
        self.mode
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// `"cat. dog."` for categories; the caption itself otherwise.
    pub fn rendered(&self) -> String {
        match (&self.mode, &self.caption) {
            (PromptMode::Caption, Some(c)) => c.clone(),
            _ => self.phrases.iter().map(|p| format!("{p}.")).collect::<Vec<_>>().join(" "),
        }
    }

    /// Same prompt with phrases reordered: phrase `i` of the result is phrase
    /// `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.phrases.len()];
        if order.len() != self.phrases.len() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Validation(format!("{order:?} is not a permutation of {} phrases", self.phrases.len())));
        }
        Ok(Prompt { mode: self.mode, phrases: order.iter().map(|&i| self.phrases[i].clone()).collect(), caption: self.caption.clone() })
    }
}

/// Half-open token range.
pub type Span = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub token_ids: Vec<u32>,
    pub phrase_spans: Vec<Span>,
    pub self_mask: AttnMask,
    pub position_ids: Vec<usize>,
}

impl TokenizedPrompt {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// FNV-1a followed by a SplitMix64 finalizer; stable across platforms and
/// releases.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    (stable_hash64(word.as_bytes()) % vocab_size as u64) as u32
}

/// Lowercased words of `text`, split on anything that is not alphanumeric.
pub fn split_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn tokenize(prompt: &Prompt, vocab_size: usize) -> Result<TokenizedPrompt> {
    if vocab_size < 256 {
        return Err(Error::Validation(format!("vocab_size must be >= 256, got {vocab_size}")));
    }
    let mut token_ids = Vec::new();
    let mut position_ids = Vec::new();
    let mut phrase_spans = Vec::with_capacity(prompt.len());
    for (i, phrase) in prompt.phrases().iter().enumerate() {
        let words = split_words(phrase);
        if words.is_empty() {
            return Err(Error::Validation(format!("phrase {i} ({phrase:?}) has no tokens")));
        }
        let start = token_ids.len();
        for (pos, w) in words.iter().enumerate() {
            token_ids.push(word_id(w, vocab_size));
            position_ids.push(pos);
        }
        phrase_spans.push((start, token_ids.len()));
    }
    let self_mask = build_phrase_mask(&phrase_spans, token_ids.len())?;
    Ok(TokenizedPrompt { token_ids, phrase_spans, self_mask, position_ids })
}

/// `mask[i][j]` is true iff tokens `i` and `j` share a span.
pub fn build_phrase_mask(spans: &[Span], t: usize) -> Result<AttnMask> {
    let mut owner = vec![usize::MAX; t];
    for (k, &(s, e)) in spans.iter().enumerate() {
        if s >= e || e > t {
            return Err(Error::Validation(format!("span ({s}, {e}) invalid for {t} tokens")));
        }
        for o in &mut owner[s..e] {
            if *o != usize::MAX {
                return Err(Error::Validation(format!("span ({s}, {e}) overlaps span {}", *o)));
            }
            *o = k;
        }
    }
    Ok(AttnMask::from_fn(t, t, |i, j| owner[i] != usize::MAX && owner[i] == owner[j]))
}

/// Encoded prompt tokens plus the span structure needed downstream.
#[derive(Clone, Debug)]
pub struct TextFeatures {
    pub features: Tensor<f32>,
    pub phrase_spans: Vec<Span>,
    pub self_mask: AttnMask,
}

impl TextFeatures {
    pub fn num_tokens(&self) -> usize {
        self.features.dim(0)
    }

    pub fn num_phrases(&self) -> usize {
        self.phrase_spans.len()
    }

    /// Features of phrase `j` as a `[len, d]` block.
    pub fn phrase_block(&self, j: usize) -> Result<Tensor<f32>> {
        let (s, e) = self.phrase_spans[j];
        self.features.slice_rows(s, e)
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoderLayer {
    pub norm1: LayerNorm,
    pub attn: AttentionParams,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub struct TextEncoderWeights {
    /// `[vocab, d]`.
    pub embedding: Tensor<f32>,
    /// Learned positions, `[max_phrase_len, d]`.
    pub positions: Tensor<f32>,
    pub layers: Vec<TextEncoderLayer>,
}

impl TextEncoderWeights {
    pub fn build(src: &mut impl ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        let TextConfig { vocab_size, max_phrase_len, layers, heads, ffn_dim } = cfg.text;
        let embedding = src.param("text.embedding", &[vocab_size, d], Init::Xavier { fan_in: vocab_size, fan_out: d })?;
        let positions = src.param("text.positions", &[max_phrase_len, d], Init::Xavier { fan_in: max_phrase_len, fan_out: d })?;
        let layers = (0..layers)
            .map(|l| {
                let p = format!("text.layer{l}");
                Ok(TextEncoderLayer {
                    norm1: LayerNorm::build(src, &format!("{p}.norm1"), d, cfg.layer_norm_eps)?,
                    attn: AttentionParams::build(src, &format!("{p}.attn"), d, heads)?,
                    norm2: LayerNorm::build(src, &format!("{p}.norm2"), d, cfg.layer_norm_eps)?,
                    ffn: FeedForward::build(src, &format!("{p}.ffn"), d, ffn_dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { embedding, positions, layers })
    }
}

/// Pre-norm transformer over the prompt tokens with the phrase mask.
pub fn encode_text(tp: &TokenizedPrompt, weights: &TextEncoderWeights) -> Result<TextFeatures> {
    let [vocab, d] = weights.embedding.dims2()?;
    let [max_len, _] = weights.positions.dims2()?;
    if tp.is_empty() {
        return Err(Error::Validation("cannot encode an empty prompt".into()));
    }
    let mut data = Vec::with_capacity(tp.len() * d);
    for (&id, &pos) in tp.token_ids.iter().zip(&tp.position_ids) {
        if id as usize >= vocab {
            return Err(Error::Validation(format!("token id {id} outside vocabulary of {vocab}")));
        }
        if pos >= max_len {
            return Err(Error::Capacity(format!("position {pos} exceeds the position table of {max_len}")));
        }
        let e = weights.embedding.row(id as usize);
        let p = weights.positions.row(pos);
        data.extend(e.iter().zip(p).map(|(a, b)| a + b));
    }
    let mut x = Tensor::new([tp.len(), d], data)?;
    for layer in &weights.layers {
        let h = layer.norm1.forward(&x)?;
        x.add_assign(&multi_head_attention(&h, &h, &h, Some(&tp.self_mask), &layer.attn)?)?;
        let h = layer.norm2.forward(&x)?;
        x.add_assign(&layer.ffn.forward(&h)?)?;
    }
    Ok(TextFeatures { features: x, phrase_spans: tp.phrase_spans.clone(), self_mask: tp.self_mask.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Initializer;

    pub(crate) const COCO: [&str; 80] = [
        "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "traffic light",
        "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
        "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
        "skis", "snowboard", "sports ball", "kite", "baseball bat", "baseball glove", "skateboard", "surfboard",
        "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
        "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
        "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard",
        "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
        "teddy bear", "hair drier", "toothbrush",
    ];

    fn encoder(layers: usize) -> TextEncoderWeights {
        let mut cfg = ModelConfig::default();
        cfg.text.layers = layers;
        TextEncoderWeights::build(&mut Initializer::new(5, String::new()), &cfg).unwrap()
    }

    #[test]
    fn assemble_examples() {
        let p = assemble_prompt(&["cat", "dog"]).unwrap();
        assert_eq!(p.rendered(), "cat. dog.");
        assert_eq!(p.len(), 2);
        let p = assemble_prompt(&["atlantic puffin"]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(tokenize(&p, 4096).unwrap().phrase_spans, vec![(0, 2)]);
        assert!(matches!(assemble_prompt::<&str>(&[]), Err(Error::Validation(_))));
        assert!(matches!(assemble_prompt(&["cat", "  "]), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_rendered_form() {
        let p = Prompt::parse_categories("person. chair. bottle").unwrap();
        assert_eq!(p.phrases(), &["person", "chair", "bottle"]);
        assert_eq!(Prompt::parse_categories(&p.rendered()).unwrap(), p);
    }

    #[test]
    fn caption_prompt_uses_char_offsets() {
        let caption = "a brown dog chases a red ball";
        let p = Prompt::from_caption(caption, &[(2, 11), (21, 29)]).unwrap();
        assert_eq!(p.phrases(), &["brown dog", "red ball"]);
        assert_eq!(p.rendered(), caption);
        assert!(Prompt::from_caption(caption, &[(5, 40)]).is_err());
        let tp = tokenize(&p, 4096).unwrap();
        assert_eq!(tp.phrase_spans, vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn tokenize_examples() {
        let tp = tokenize(&assemble_prompt(&["cat", "dog"]).unwrap(), 4096).unwrap();
        assert_eq!(tp.phrase_spans, vec![(0, 1), (1, 2)]);
        assert_eq!(tp.self_mask, AttnMask::from_fn(2, 2, |i, j| i == j));
        assert_eq!(tp.position_ids, vec![0, 0]);
        assert_eq!(word_id("cat", 4096), word_id("cat", 4096));
        let tp = tokenize(&assemble_prompt(&["Cat", "cat!"]).unwrap(), 4096).unwrap();
        assert_eq!(tp.token_ids[0], tp.token_ids[1]);
        assert!(tokenize(&assemble_prompt(&["..."]).unwrap(), 4096).is_err());
        assert!(tokenize(&assemble_prompt(&["cat"]).unwrap(), 100).is_err());
    }

    #[test]
    fn coco_vocabulary_has_no_collisions_at_4096() {
        let mut words: Vec<String> = COCO.iter().flat_map(|c| split_words(c)).collect();
        words.sort();
        words.dedup();
        let mut ids: Vec<u32> = words.iter().map(|w| word_id(w, 4096)).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), words.len());
    }

    #[test]
    fn phrase_mask_examples() {
        let m = build_phrase_mask(&[(0, 2), (2, 5)], 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.get(i, j), (i < 2) == (j < 2));
            }
        }
        assert!(build_phrase_mask(&[(0, 4)], 4).unwrap().row(3).iter().all(|&a| a));
        assert!(matches!(build_phrase_mask(&[(0, 3), (2, 4)], 4), Err(Error::Validation(_))));
    }

    #[test]
    fn encoder_shape_and_zero_depth() {
        let tp = tokenize(&assemble_prompt(&["traffic light", "dog"]).unwrap(), 4096).unwrap();
        let w = encoder(2);
        assert_eq!(encode_text(&tp, &w).unwrap().features.shape(), &[3, 64]);
        let w0 = encoder(0);
        let f = encode_text(&tp, &w0).unwrap().features;
        for (t, (&id, &pos)) in tp.token_ids.iter().zip(&tp.position_ids).enumerate() {
            let want: Vec<f32> = w0.embedding.row(id as usize).iter().zip(w0.positions.row(pos)).map(|(a, b)| a + b).collect();
            assert_eq!(f.row(t), &want[..]);
        }
    }

    #[test]
    fn position_capacity_error() {
        let long = vec!["w"; 20].join(" ");
        let tp = tokenize(&assemble_prompt(&[long]).unwrap(), 4096).unwrap();
        assert!(matches!(encode_text(&tp, &encoder(1)), Err(Error::Capacity(_))));
    }

    #[test]
    fn phrase_permutation_permutes_blocks() {
        let w = encoder(2);
        let p = assemble_prompt(&["red car", "dog", "wine glass"]).unwrap();
        let q = p.permuted(&[2, 0, 1]).unwrap();
        let fp = encode_text(&tokenize(&p, 4096).unwrap(), &w).unwrap();
        let fq = encode_text(&tokenize(&q, 4096).unwrap(), &w).unwrap();
        for (j, &src) in [2, 0, 1].iter().enumerate() {
            let diff = fq.phrase_block(j).unwrap().max_abs_diff(&fp.phrase_block(src).unwrap()).unwrap();
            assert!(diff < 1e-5, "phrase {j}: {diff}");
        }
    }

    #[test]
    fn zeroing_one_phrase_leaves_others_untouched() {
        let w = encoder(2);
        let tp = tokenize(&assemble_prompt(&["red car", "dog", "wine glass"]).unwrap(), 4096).unwrap();
        let mut zeroed = tp.clone();
        for id in &mut zeroed.token_ids[2..3] {
            *id = 0;
        }
        let a = encode_text(&tp, &w).unwrap();
        let b = encode_text(&zeroed, &w).unwrap();
        for j in [0, 2] {
            assert_eq!(a.phrase_block(j).unwrap(), b.phrase_block(j).unwrap());
        }
        assert_ne!(a.phrase_block(1).unwrap(), b.phrase_block(1).unwrap());
    }

    #[test]
    fn tokenization_is_pure() {
        let p = assemble_prompt(&COCO).unwrap();
        assert_eq!(tokenize(&p, 4096).unwrap(), tokenize(&p, 4096).unwrap());
    }
}
