//! Checks the hand-derived gradient of the detection loss against central
//! differences on a few random instances.
//!
//! cargo run --example gradcheck

use gdino::tensor::Tensor;
use gdino::train::{detection_loss, grad_check_all, DetectionLossObjective, GroundTruth, LossWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gdino::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (k, p, g) = (6, 4, 3);
    for i in 0..5 {
        let mut b = || [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)];
        let boxes = Tensor::new([k, 4], (0..k).flat_map(|_| b()).collect())?;
        let gt_boxes = (0..g).map(|_| b()).collect();
        let logits = Tensor::from_fn([k, p], |_| rng.random_range(-3.0..3.0))?;
        let gt = GroundTruth::new(gt_boxes, (0..g).map(|j| j % p).collect())?;
        let w = LossWeights::default();
        let loss = detection_loss(&logits, &boxes, &gt, &w)?;
        let obj = DetectionLossObjective { queries: k, phrases: p, gt, weights: w };
        let r = grad_check_all(&obj, &DetectionLossObjective::pack(&logits, &boxes), 1e-6)?;
        println!(
            "instance {i}: loss {:.4} (cls {:.4}, l1 {:.4}, giou {:.4}); {} coords, {} skipped, max rel err {:.2e}",
            loss.total, loss.cls, loss.l1, loss.giou, r.checked, r.skipped.len(), r.max_rel_error
        );
    }
    Ok(())
}
