//! Prints the instruction grammar: vocabulary, productions per family, and
//! the token round trip for one production of each family.
//!
//! Usage: `cargo run --example grammar`

use paff::grammar::{enumerate_all_shapes, enumerate_instructions, manifest, Family, Vocabulary};
use paff::world::WorldSplits;

fn main() -> paff::Result<()> {
    let splits = WorldSplits::default();
    print!("{}", manifest(&splits));

    let vocab = Vocabulary::standard();
    for family in Family::PLACEMENT {
        let seen = enumerate_instructions(&[family], &splits);
        let all = enumerate_all_shapes(&[family], &splits);
        let first = &all[0];
        let back = vocab.detokenize(&first.tokens)?;
        assert_eq!(back, first.surface);
        println!(
            "{:<22} {:>3} productions ({:>3} with unseen shapes), e.g. {:?} -> {:?}",
            family.name(),
            seen.len(),
            all.len(),
            first.surface,
            first.tokens
        );
    }
    println!(
        "relabel candidates: {}",
        enumerate_all_shapes(&Family::PLACEMENT, &splits).len()
    );

    // Anything outside the vocabulary is rejected, not mapped to an unknown token.
    println!("{:?}", vocab.tokenize("put the teapot in the red bowl"));
    Ok(())
}
