//! Median latency of both enhancers, as CSV.
//!
//! cargo run --release --example latency -- [size] [predict|enhancer]

use gdino::bench::{run_latency_bench, BenchOptions, BenchScope, CSV_HEADER};
use gdino::config::{ModelConfig, Variant};

fn main() -> gdino::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map_or(640, |s| s.parse().expect("size must be an integer"));
    let scope = match args.next().as_deref() {
        Some("enhancer") => BenchScope::Enhancer,
        _ => BenchScope::Predict,
    };
    let cfg = ModelConfig::default();
    println!("{CSV_HEADER}");
    let mut medians = Vec::new();
    for variant in [Variant::Original, Variant::Efficient] {
        let opts = BenchOptions { runs: 20, warmup: 5, scope, ..BenchOptions::new(variant, size) };
        let r = run_latency_bench(&cfg, &opts)?;
        println!("{}", r.csv_row());
        medians.push(r.median_ms);
    }
    eprintln!("{scope:?} latency ratio {:.2}", medians[0] / medians[1]);
    Ok(())
}
