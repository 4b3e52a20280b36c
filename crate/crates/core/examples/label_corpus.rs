//! Labels an unlabeled corpus with a trained classifier and compares the
//! labels to the planted bits.

use bfp_textgen::classifier::{label_corpus, train_classifier, unk_rate, CnnConfig};
use bfp_textgen::harness::{synth_corpus, SynthSpec};
use bfp_textgen::Trait;

fn main() -> bfp_textgen::Result<()> {
    let spec = SynthSpec::default();
    let (train, _) = synth_corpus(&spec, 1500, 2)?;
    let (model, _) = train_classifier(&train, &CnnConfig { epochs: 4, ..CnnConfig::default() }, 2)?;

    let (mut fresh, _) = synth_corpus(&spec, 500, 3)?;
    for d in &mut fresh {
        d.labels = None;
    }
    println!("UNK rate {:.4}", unk_rate(&fresh, &model.vocab));
    let labeled = label_corpus(&fresh, &model)?;
    for t in Trait::ALL {
        let hits = labeled.iter().filter(|d| d.labels.unwrap()[t] == d.latent.unwrap()[t]).count();
        println!("{t}: {:.3} agreement", hits as f64 / labeled.len() as f64);
    }
    Ok(())
}
