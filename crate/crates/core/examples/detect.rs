//! Runs both enhancer variants on the bundled scene with a randomly
//! initialized model and prints the top detections.
//!
//! cargo run --example detect -- "person. chair. bottle"

use gdino::backbone::preprocess_image;
use gdino::config::{ModelConfig, Variant};
use gdino::io::{detections_to_records, load_image};
use gdino::model::Model;
use gdino::text::Prompt;

fn main() -> gdino::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "person. chair. bottle".into());
    let prompt = Prompt::parse_categories(&text)?;
    let raw = load_image(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/scene_640.ppm"))?;
    for variant in [Variant::Original, Variant::Efficient] {
        let mut cfg = ModelConfig::default();
        cfg.enhancer.variant = variant;
        cfg.threshold = 0.0;
        let (model, _) = Model::init(&cfg, 7)?;
        let (img, scale) = preprocess_image(&raw, cfg.input_size)?;
        let dets = model.predict_image(&img, &prompt)?;
        println!("{variant}: {} detections", dets.len());
        let records = detections_to_records(0, &dets, prompt.phrases(), cfg.input_size, scale, raw.width, raw.height)?;
        for r in records.iter().take(5) {
            println!("  {:<10} {:.3} [{:.1}, {:.1}, {:.1}, {:.1}]", r.category, r.score, r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]);
        }
    }
    Ok(())
}
