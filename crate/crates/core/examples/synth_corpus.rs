//! Draws a small synthetic corpus and shows how planted polarity shows up in
//! the marker counts.

use bfp_textgen::harness::{counting_oracle, synth_corpus, SynthSpec};
use bfp_textgen::Trait;

fn main() -> bfp_textgen::Result<()> {
    let spec = SynthSpec::default();
    let (docs, lexicon) = synth_corpus(&spec, 5, 42)?;
    println!("lexicon has {} categories", lexicon.num_categories());
    for d in &docs {
        let latent = d.latent.expect("synthetic documents carry latent bits");
        let votes = counting_oracle(&d.tokens, &spec);
        println!("latent {:?} counting oracle {:?}", latent.0, votes.0);
        println!("  {}", d.text);
    }
    let (big, _) = synth_corpus(&spec, 1000, 7)?;
    let high_e = big.iter().filter(|d| d.latent.unwrap()[Trait::Extraversion] == 1).count();
    println!("{high_e}/1000 documents are high on extraversion");
    Ok(())
}
