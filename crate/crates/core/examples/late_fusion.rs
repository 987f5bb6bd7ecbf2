//! With fusion disabled the enhanced image features do not depend on the
//! prompt; with early fusion they do.
//!
//! cargo run --example late_fusion

use gdino::backbone::preprocess_image;
use gdino::config::{FusionMode, ModelConfig};
use gdino::io::synthetic_scene;
use gdino::model::Model;
use gdino::text::assemble_prompt;

fn main() -> gdino::Result<()> {
    let (img, _) = preprocess_image(&synthetic_scene(256, 256), 256)?;
    let a = assemble_prompt(&["cat", "dog"])?;
    let b = assemble_prompt(&["kite", "surfboard", "oven"])?;
    for mode in [FusionMode::Early, FusionMode::None] {
        let mut cfg = ModelConfig::default();
        cfg.input_size = 256;
        cfg.enhancer.fusion_mode = mode;
        let (model, _) = Model::init(&cfg, 1)?;
        let ea = model.enhance(&img, &a)?.2;
        let eb = model.enhance(&img, &b)?.2;
        let diff = ea.pyramid.levels.iter().zip(&eb.pyramid.levels).map(|(x, y)| x.max_abs_diff(y)).collect::<gdino::Result<Vec<_>>>()?;
        println!("{mode:?}: max |P3|, |P4|, |P5| difference between prompts {diff:?}");
    }
    Ok(())
}
