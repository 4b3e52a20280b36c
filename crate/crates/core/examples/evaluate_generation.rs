//! Trains conditional and unconditional generators on a small corpus and
//! prints the controllability table.

use bfp_textgen::generator::{train_generator, LstmConfig};
use bfp_textgen::harness::{evaluate_generation, synth_corpus, EvalOptions, SynthSpec};
use bfp_textgen::lexicon::{score_tokens, tertile_thresholds};

fn main() -> bfp_textgen::Result<()> {
    let spec = SynthSpec::default();
    let (docs, lexicon) = synth_corpus(&spec, 2000, 8)?;
    let scores: Vec<_> = docs.iter().map(|d| score_tokens(&d.tokens, &lexicon)).collect();
    let thresholds = tertile_thresholds(&scores)?;

    let cfg = LstmConfig { hidden_dim: 64, epochs: 8, ..LstmConfig::default() };
    let (cond, _) = train_generator(&docs, &cfg, 8)?;
    let (unc, _) = train_generator(&docs, &cfg.clone().unconditional(), 9)?;

    let opts = EvalOptions { n_per_condition: 100, temperature: 0.7, ..EvalOptions::default() };
    let out = evaluate_generation(&cond, Some(&unc), &lexicon, &thresholds, &spec.seed_pool(), &opts)?;
    print!("{}", out.report.render_table());
    for (t, d) in out.report.dimensions.iter() {
        println!("{t}: margin over unconditional {:+.3}", d.margin_over_unconditional().unwrap_or(f64::NAN));
    }
    Ok(())
}
