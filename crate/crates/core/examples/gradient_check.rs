//! Finite-difference check of the LSTM and CNN backward passes at toy sizes.

use bfp_textgen::classifier::{CnnConfig, CnnModel};
use bfp_textgen::generator::{BfpCondition, LstmConfig, LstmModel};
use bfp_textgen::numeric::{gradient_check, GradCheckConfig};
use bfp_textgen::rng;
use bfp_textgen::text::build_vocab;
use bfp_textgen::TraitMap;

fn main() -> bfp_textgen::Result<()> {
    let words: Vec<String> = (0..16).map(|i| format!("w{i}")).collect();
    let vocab = build_vocab([words.clone()].iter().map(|d| d.as_slice()), 1, 100);

    let cfg = LstmConfig { embed_dim: 4, hidden_dim: 5, max_len: 4, ..LstmConfig::default() };
    let mut lstm = LstmModel::new(cfg, vocab.clone(), &mut rng::seeded(1))?;
    let e = lstm.encode_tokens(&words[2..4]);
    let c = BfpCondition::new([1, 0, 1, 0, 1])?;
    let report = gradient_check(
        &mut lstm,
        |m| m.batch_loss(&[(&e, Some(&c))], true),
        |m| m.clone().batch_loss(&[(&e, Some(&c))], false),
        GradCheckConfig::default(),
    )?;
    for p in &report.params {
        println!("lstm {:14} {:4} coords, max rel err {:.2e}", p.name, p.coords_checked, p.max_rel_error);
    }

    let cfg = CnnConfig { embed_dim: 4, num_filters: 3, max_len: 10, ..CnnConfig::default() };
    let mut cnn = CnnModel::new(cfg, vocab, &mut rng::seeded(2))?;
    let e = cnn.encode_tokens(&words[5..10]);
    let y = TraitMap([1, 0, 0, 1, 1]);
    let report = gradient_check(&mut cnn, |m| m.accumulate_gradients(&e, &y), |m| m.loss(&e, &y), GradCheckConfig::default())?;
    for p in &report.params {
        println!("cnn  {:14} {:4} coords, max rel err {:.2e}", p.name, p.coords_checked, p.max_rel_error);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
