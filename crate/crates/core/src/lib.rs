//! Personality-conditioned text generation.
//!
//! A CNN classifier labels a corpus with five binary personality traits, a
//! conditional LSTM learns to generate text given those labels, and a
//! lexicon-based scorer measures whether generated text actually shifts in
//! the requested direction. All models are plain `f64` dense networks with
//! hand-written backward passes.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod generator;
pub mod harness;
pub mod lexicon;
pub mod numeric;
pub mod rng;
pub mod text;
pub mod traits;

pub use error::{Error, Result};
pub use traits::{Level, Trait, TraitMap};
