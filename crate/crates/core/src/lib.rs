//! Desk-scale open-set detection graph built around two interchangeable
//! feature enhancers: a multi-scale deformable enhancer with early
//! image/text fusion over every pyramid level, and an efficient enhancer that
//! attends and fuses on P5 only and merges P3/P4 back with cross-scale
//! convolutions.
//!
//! The crate also carries the tooling needed to compare them: exact FLOP
//! accounting, latency benchmarking, set-prediction losses with checked
//! gradients, and a fixed-AP evaluator.

pub mod backbone;
pub mod bench;
pub mod cli;
pub mod config;
pub mod detector;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod flops;
pub mod io;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod text;
pub mod train;
pub mod weights;

pub use error::{Error, LoadError, Result};
pub use tensor::{DType, Element, Tensor};
