//! Negative-prompt sampling: pad the ground-truth categories with categories
//! that are absent from the image.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{assemble_prompt, Prompt};

/// Number of negatives drawn for `positives` ground-truth categories.
pub fn negative_count(positives: usize, ratio: f64) -> Result<usize> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Validation(format!("negative ratio must be finite and >= 0, got {ratio}")));
    }
    Ok((ratio * positives as f64).ceil() as usize)
}

/// Ground-truth categories plus `⌈ratio·|gt|⌉` distinct categories from
/// `pool \ gt`, shuffled with `seed`.
pub fn sample_negative_prompts<S: AsRef<str>, P: AsRef<str>>(gt_categories: &[S], pool: &[P], ratio: f64, seed: u64) -> Result<Prompt> {
    let mut positives: Vec<&str> = Vec::new();
    for c in gt_categories {
        let c = c.as_ref().trim();
        if !positives.contains(&c) {
            positives.push(c);
        }
    }
    let need = negative_count(positives.len(), ratio)?;
    let mut candidates: Vec<&str> = Vec::new();
    for c in pool {
        let c = c.as_ref().trim();
        if !c.is_empty() && !positives.contains(&c) && !candidates.contains(&c) {
            candidates.push(c);
        }
    }
    if candidates.len() < need {
        return Err(Error::Validation(format!(
            "pool has {} categories outside the ground truth, {need} negatives requested",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phrases: Vec<&str> = positives;
    phrases.extend(candidates.choose_multiple(&mut rng, need).copied());
    phrases.shuffle(&mut rng);
    assemble_prompt(&phrases)
}
