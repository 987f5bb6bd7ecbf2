//! Minimum-cost assignment of queries to targets.
//!
//! cargo run --example matching

use gdino::train::hungarian_match;

fn main() -> gdino::Result<()> {
    // 4 queries, 3 targets
    let cost = [
        4.0, 1.0, 3.0, //
        2.0, 0.0, 5.0, //
        3.0, 2.0, 2.0, //
        9.0, 9.0, 0.5,
    ];
    let m = hungarian_match(&cost, 4, 3)?;
    for (q, t) in &m.pairs {
        println!("query {q} -> target {t} (cost {})", cost[q * 3 + t]);
    }
    println!("total {}", m.total_cost);
    Ok(())
}
