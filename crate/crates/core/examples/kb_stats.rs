// Sparsity and ambiguity statistics of a knowledge base.

use met_core::dataset::{compute_stats, generate_synthetic_mkb, SynthSpec};
use met_core::kb::validate_kb;

fn main() -> met_core::Result<()> {
    let s = generate_synthetic_mkb(&SynthSpec { num_entities: 300, vocab_size: 600, ..SynthSpec::default() })?;
    let stats = compute_stats(&s.kb);
    print!("{}", stats.to_table());
    println!("images per entity: {:?}", stats.image_histogram);
    println!("integrity violations: {}", validate_kb(&s.kb).len());
    Ok(())
}
