//! Trains a small conditional LSTM and reports the epoch losses and the
//! held-out perplexity with the true labels and with every bit flipped.

use bfp_textgen::generator::{perplexity, train_generator, BfpCondition, ConditionSource, LstmConfig};
use bfp_textgen::harness::{synth_corpus, SynthSpec};

fn main() -> bfp_textgen::Result<()> {
    let spec = SynthSpec::default();
    let (docs, _) = synth_corpus(&spec, 1500, 4)?;
    let (held_out, _) = synth_corpus(&spec, 100, 5)?;
    let cfg = LstmConfig { hidden_dim: 64, epochs: 5, ..LstmConfig::default() };
    let (model, report) = train_generator(&docs, &cfg, 4)?;
    println!("epoch losses {:?}", report.epoch_losses);
    println!("perplexity with labels {:.2}", perplexity(&model, &held_out, ConditionSource::Labels)?);
    let mut flipped = held_out.clone();
    for d in &mut flipped {
        d.labels = d.labels.map(|l| bfp_textgen::TraitMap(l.0.map(|b| 1 - b)));
    }
    println!("perplexity with flipped labels {:.2}", perplexity(&model, &flipped, ConditionSource::Labels)?);
    let fixed = BfpCondition::new([0; 5])?;
    println!("perplexity with all-low condition {:.2}", perplexity(&model, &held_out, ConditionSource::Fixed(fixed))?);
    let path = std::env::temp_dir().join("bfp-generator.json");
    model.save(&path)?;
    println!("saved to {}", path.display());
    Ok(())
}
