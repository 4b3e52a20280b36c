//! Trains the CNN trait classifier on a synthetic corpus and prints per-epoch
//! validation accuracy.

use bfp_textgen::classifier::{train_classifier, CnnConfig};
use bfp_textgen::harness::{synth_corpus, SynthSpec};

fn main() -> bfp_textgen::Result<()> {
    let (docs, _) = synth_corpus(&SynthSpec::default(), 1500, 1)?;
    let cfg = CnnConfig { epochs: 4, ..CnnConfig::default() };
    let (model, report) = train_classifier(&docs, &cfg, 1)?;
    for e in &report.epochs {
        println!("epoch {} loss {:.4} mean val acc {:.3}", e.epoch, e.train_loss, e.mean_val_accuracy);
    }
    println!("kept epoch {} with {:?}", report.best_epoch, report.best_val_accuracy.0);
    let path = std::env::temp_dir().join("bfp-classifier.json");
    model.save(&path)?;
    println!("saved to {}", path.display());
    Ok(())
}
