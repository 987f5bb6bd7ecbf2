//! Image tokens per pyramid level, and how many fewer a P5-only enhancer sees.
//!
//! cargo run --example tokens

use gdino::bench::count_tokens;
use gdino::config::STRIDES;

fn main() -> gdino::Result<()> {
    println!("{:>6} {:>8} {:>8} {:>8} {:>8} {:>6}", "size", "P3", "P4", "P5", "total", "ratio");
    for size in [64, 256, 640, 1280] {
        let t = count_tokens(size, &STRIDES)?;
        let [p3, p4, p5] = t.per_level;
        println!("{size:>6} {p3:>8} {p4:>8} {p5:>8} {:>8} {:>6}", t.total, t.p5_ratio());
    }
    Ok(())
}
