//! Fixed AP on a toy dataset as the dataset-wide per-class cap shrinks.
//!
//! cargo run --example fixed_ap

use gdino::eval::{evaluate_fixed_ap, EvalConfig, ImageDetections, ImageGroundTruth, LabeledBox, ScoredBox};

fn main() -> gdino::Result<()> {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for id in 0..20u64 {
        let f = id as f64;
        let b = [0.2 + 0.03 * f, 0.5, 0.15, 0.2];
        let category = if id % 3 == 0 { "dog" } else { "cat" }.to_string();
        gts.push(ImageGroundTruth { image_id: id, boxes: vec![LabeledBox { category: category.clone(), bbox: b }] });
        let hit = ScoredBox { category: category.clone(), score: 0.3 + 0.02 * f, bbox: [b[0] + 0.01, b[1], b[2], b[3]] };
        let miss = ScoredBox { category, score: 0.9 - 0.01 * f, bbox: [0.9, 0.1, 0.05, 0.05] };
        dets.push(ImageDetections { image_id: id, detections: vec![hit, miss] });
    }
    for cap in [5, 10, 20, 40, 10_000] {
        let cfg = EvalConfig::with_cap(cap);
        let r = evaluate_fixed_ap(&dets, &gts, &cfg)?;
        println!("cap {cap:>5}: AP {:.4}  AP50 {:.4}  {:?}", r.mean_ap, r.at_threshold(&cfg, 0.5).unwrap_or(0.0), r.per_class);
    }
    Ok(())
}
