//! Per-stage FLOPs of both enhancer variants at one input size.
//!
//! cargo run --example flops_report -- 640

use gdino::bench::flop_report;
use gdino::config::{ModelConfig, Variant};
use gdino::flops::Stage;

fn main() -> gdino::Result<()> {
    let size = std::env::args().nth(1).map_or(Ok(640), |s| s.parse()).expect("size must be an integer");
    let cfg = ModelConfig::default();
    let orig = flop_report(&cfg, Variant::Original, size, 0)?;
    let eff = flop_report(&cfg, Variant::Efficient, size, 0)?;
    println!("{:<20} {:>16} {:>16}", "stage", "original", "efficient");
    for s in Stage::ALL {
        println!("{:<20} {:>16} {:>16}", s.name(), orig.get(s), eff.get(s));
    }
    println!("{:<20} {:>16} {:>16}", "enhancer", orig.enhancer_total, eff.enhancer_total);
    println!("{:<20} {:>16} {:>16}", "total", orig.total, eff.total);
    println!("enhancer ratio {:.2}", orig.enhancer_total as f64 / eff.enhancer_total as f64);
    Ok(())
}
