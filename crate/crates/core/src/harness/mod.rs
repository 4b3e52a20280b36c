//! Synthetic testbed and generation evaluation.

pub mod eval;
pub mod synth;

pub use eval::{
    evaluate_generation, generation_accuracy, DimensionReport, EvalOptions, EvalOutcome, EvalReport, EvalSample,
    LevelDistribution,
};
pub use synth::{counting_oracle, oracle_label, synth_corpus, MarkerSelection, SynthSpec};
