//! Scores a couple of texts against a two-category lexicon, then calibrates
//! tertile cuts and assigns levels.

use bfp_textgen::lexicon::{assign_levels, category_frequencies, score_tokens, tertile_thresholds, trait_scores, Lexicon};
use bfp_textgen::text::{tokenize, TokenizeMode};

const LEXICON: &str = r#"{
  "trait_order": ["E", "A", "C", "N", "O"],
  "categories": [
    {"name": "social", "entries": ["party", "friend*"]},
    {"name": "anxiety", "entries": ["worr*", "nervous"]}
  ],
  "weights": [[0.8, 0.2, 0, -0.3, 0], [-0.2, 0, 0, 0.9, 0]]
}"#;

fn main() -> bfp_textgen::Result<()> {
    let lex = Lexicon::from_json_str(LEXICON)?;
    let texts = [
        "party with friends tonight",
        "worried and nervous about the exam",
        "quiet evening reading",
        "friends worry too much",
    ];
    let mut all = Vec::new();
    for t in texts {
        let tokens = tokenize(t, TokenizeMode::Whitespace);
        let freqs = category_frequencies(&tokens, &lex);
        let scores = trait_scores(&freqs, &lex)?;
        println!("{t:40} freqs {freqs:?} scores {:?}", scores.0);
        all.push(score_tokens(&tokens, &lex));
    }
    let th = tertile_thresholds(&all)?;
    for (t, s) in texts.iter().zip(&all) {
        println!("{t:40} levels {:?}", assign_levels(s, &th).0);
    }
    Ok(())
}
