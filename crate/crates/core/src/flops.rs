//! Shared FLOP-counting interface.
//!
//! Kernels call [`record`] with their closed-form cost. Nothing is recorded
//! unless a [`count`] session is active on the current thread, so the hooks
//! cost one thread-local lookup in normal inference.
//!
//! Cost conventions: matmul `2·m·k·n`; conv `2·c_out·c_in·kh·kw·H'·W'`;
//! attention `2·Nq·Nk·dh` for scores plus the same for the weighted sum, per
//! head; bilinear sampling 11 per sample per channel. Elementwise work
//! (norms, activations, softmax, residual adds) is not counted.

use std::cell::RefCell;
use std::fmt;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Image backbone and text encoder.
    Backbone,
    /// Image-stream self-attention layers of the enhancer, with their FFNs.
    EnhancerSelfAttn,
    /// Cross-modality fusion and the text-stream layers of the enhancer.
    EnhancerFusion,
    CrossScaleFusion,
    Decoder,
    /// Query selection, classification, box heads.
    Heads,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Backbone,
        Stage::EnhancerSelfAttn,
        Stage::EnhancerFusion,
        Stage::CrossScaleFusion,
        Stage::Decoder,
        Stage::Heads,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Backbone => "backbone",
            Stage::EnhancerSelfAttn => "enhancer-self-attn",
            Stage::EnhancerFusion => "enhancer-fusion",
            Stage::CrossScaleFusion => "cross-scale-fusion",
            Stage::Decoder => "decoder",
            Stage::Heads => "heads",
        }
    }

    /// Stages making up the feature enhancer (both variants).
    pub fn is_enhancer(self) -> bool {
        matches!(self, Stage::EnhancerSelfAttn | Stage::EnhancerFusion | Stage::CrossScaleFusion)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exact per-stage FLOP totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCounts {
    counts: [u64; 6],
}

impl FlopCounts {
    pub fn get(&self, stage: Stage) -> u64 {
        self.counts[stage.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn enhancer_total(&self) -> u64 {
        Stage::ALL.iter().filter(|s| s.is_enhancer()).map(|&s| self.get(s)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Stage, u64)> + '_ {
        Stage::ALL.iter().map(|&s| (s, self.get(s)))
    }
}

struct Session {
    stage: Stage,
    counts: FlopCounts,
}

thread_local! {
    static SESSION: RefCell<Option<Session>> = const { RefCell::new(None) };
}

/// Adds `flops` to the active stage, if a session is running on this thread.
pub fn record(flops: u64) {
    SESSION.with(|s| {
        if let Some(session) = s.borrow_mut().as_mut() {
            session.counts.counts[session.stage.index()] += flops;
        }
    });
}

pub fn is_counting() -> bool {
    SESSION.with(|s| s.borrow().is_some())
}

/// Runs `f` with a fresh counting session and returns its result with the
/// counts. Sessions nest: the outer session is restored afterwards and does
/// not see the inner counts.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, FlopCounts) {
    let outer = SESSION.with(|s| s.replace(Some(Session { stage: Stage::Backbone, counts: FlopCounts::default() })));
    let out = f();
    let inner = SESSION.with(|s| s.replace(outer));
    (out, inner.map(|s| s.counts).unwrap_or_default())
}

/// Attributes everything recorded inside `f` to `stage`.
pub fn in_stage<R>(stage: Stage, f: impl FnOnce() -> R) -> R {
    let prev = SESSION.with(|s| {
        s.borrow_mut().as_mut().map(|session| std::mem::replace(&mut session.stage, stage))
    });
    let out = f();
    if let Some(prev) = prev {
        SESSION.with(|s| {
            if let Some(session) = s.borrow_mut().as_mut() {
                session.stage = prev;
            }
        });
    }
    out
}

pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

pub fn conv_flops(c_out: usize, c_in: usize, kh: usize, kw: usize, h_out: usize, w_out: usize) -> u64 {
    2 * (c_out * c_in * kh * kw * h_out * w_out) as u64
}

/// Scores plus weighted sum over all heads; `d` is the full model width.
pub fn attention_flops(nq: usize, nk: usize, d: usize) -> u64 {
    4 * (nq * nk * d) as u64
}

pub const BILINEAR_FLOPS_PER_SAMPLE_CHANNEL: u64 = 11;

pub fn bilinear_flops(samples: usize, channels: usize) -> u64 {
    BILINEAR_FLOPS_PER_SAMPLE_CHANNEL * (samples * channels) as u64
}
