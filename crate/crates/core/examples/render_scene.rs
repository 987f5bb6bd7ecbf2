//! Writes the synthetic test scene as a binary PPM.
//!
//! cargo run --example render_scene -- assets/scene_640.ppm 640

fn main() -> gdino::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "scene.ppm".into());
    let size: usize = args.next().map_or(640, |s| s.parse().expect("size must be an integer"));
    gdino::io::save_ppm(&gdino::io::synthetic_scene(size, size), &path)?;
    println!("wrote {path}");
    Ok(())
}
