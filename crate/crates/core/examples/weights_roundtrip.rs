//! Initializes weights, saves them, reloads them and checks the file is
//! byte-for-byte stable.
//!
//! cargo run --example weights_roundtrip

use gdino::config::ModelConfig;
use gdino::model::init_weights;
use gdino::weights::{load_weights, save_weights};

fn main() -> gdino::Result<()> {
    let dir = std::env::temp_dir().join(format!("gde-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let store = init_weights(&ModelConfig::default(), 7)?;
    let (a, b) = (dir.join("a.gde"), dir.join("b.gde"));
    save_weights(&store, &a)?;
    save_weights(&load_weights(&a)?, &b)?;
    let (ba, bb) = (std::fs::read(&a)?, std::fs::read(&b)?);
    println!("{} tensors, {} values, {} bytes, config digest {}", store.len(), store.num_values(), ba.len(), store.metadata.config_digest);
    println!("identical after reload: {}", ba == bb);
    for (name, p) in store.iter().take(4) {
        println!("  {name} {:?}", p.shape);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
