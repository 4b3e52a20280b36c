//! Samples texts for two opposite conditions, plus a greedy decode.

use bfp_textgen::generator::{generate, train_generator, BfpCondition, LstmConfig};
use bfp_textgen::harness::{synth_corpus, SynthSpec};
use bfp_textgen::rng;

fn main() -> bfp_textgen::Result<()> {
    let spec = SynthSpec::default();
    let (docs, _) = synth_corpus(&spec, 800, 6)?;
    let cfg = LstmConfig { hidden_dim: 48, epochs: 3, ..LstmConfig::default() };
    let (model, _) = train_generator(&docs, &cfg, 6)?;
    let pool = spec.seed_pool();
    for cond in ["E=1,A=1,C=1,N=1,O=1", "E=0,A=0,C=0,N=0,O=0"] {
        let cond: BfpCondition = cond.parse()?;
        for i in 0..3 {
            let g = generate(&model, Some(&cond), &pool, 0.8, 30, &mut rng::stream(6, i))?;
            println!("[{cond}] {} ({:?})", g.tokens.join(" "), g.stop);
        }
    }
    let cond = BfpCondition::new([1, 0, 1, 0, 1])?;
    let g = generate(&model, Some(&cond), &pool[..1], 0.0, 30, &mut rng::seeded(0))?;
    println!("greedy from {}: {}", g.seed_word, g.tokens.join(" "));
    Ok(())
}
