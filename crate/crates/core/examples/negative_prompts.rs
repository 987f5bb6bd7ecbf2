//! Pads ground-truth categories with sampled negatives.
//!
//! cargo run --example negative_prompts -- 1.5

use gdino::train::sample_negative_prompts;

const POOL: [&str; 12] =
    ["person", "bicycle", "car", "dog", "cat", "chair", "bottle", "cup", "bird", "boat", "kite", "train"];

fn main() -> gdino::Result<()> {
    let ratio: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("ratio must be a number"));
    let gt = ["dog", "chair", "cup"];
    for seed in 0..3 {
        let prompt = sample_negative_prompts(&gt, &POOL, ratio, seed)?;
        println!("seed {seed}: {}", prompt.rendered());
    }
    Ok(())
}
