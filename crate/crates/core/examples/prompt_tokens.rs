//! How a category prompt is tokenized: word ids, phrase spans and the
//! block-diagonal phrase mask.
//!
//! cargo run --example prompt_tokens -- "traffic light. dog. dining table"

use gdino::text::{tokenize, Prompt};

fn main() -> gdino::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "traffic light. dog. dining table".into());
    let prompt = Prompt::parse_categories(&text)?;
    let tp = tokenize(&prompt, 4096)?;
    println!("rendered: {}", prompt.rendered());
    println!("ids: {:?}", tp.token_ids);
    println!("spans: {:?}", tp.phrase_spans);
    println!("positions: {:?}", tp.position_ids);
    for i in 0..tp.len() {
        let row: String = tp.self_mask.row(i).iter().map(|&a| if a { '#' } else { '.' }).collect();
        println!("  {row}");
    }
    Ok(())
}
