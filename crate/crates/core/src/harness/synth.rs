//! Synthetic corpora with planted trait signals.
//!
//! Each document carries a latent polarity vector. A fraction `signal` of its
//! tokens are markers for a uniformly chosen trait, taken from that trait's
//! high or low marker set according to the latent bit. The rest are neutral
//! tokens from a sparse bigram chain, which gives a language model some
//! structure to learn beyond unigram frequencies. By default the member of a
//! marker set is picked by the most recent neutral token, so each marker is
//! still equally likely overall but predictable from context.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::numeric::Matrix;
use crate::rng::{self, Rng};
use crate::text::{Document, ESCAPE_SENTINEL, SPECIAL_TOKENS};
use crate::traits::{Trait, TraitMap};

/// How a marker is chosen once its set is known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerSelection {
    /// Uniformly at random.
    Uniform,
    /// Index = id of the last neutral token modulo the set size; uniform
    /// before the first neutral token.
    #[default]
    FollowPrevious,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub high_markers: TraitMap<Vec<String>>,
    pub low_markers: TraitMap<Vec<String>>,
    pub neutral: Vec<String>,
    /// Probability that a token is a marker.
    pub signal: f64,
    pub len_min: usize,
    pub len_max: usize,
    /// Probability that a neutral token ignores its predecessor.
    pub bigram_smoothing: f64,
    /// Preferred successors per neutral token.
    pub bigram_fanout: usize,
    pub bigram_seed: u64,
    #[serde(default)]
    pub marker_selection: MarkerSelection,
}

pub const DEFAULT_MARKERS_PER_SET: usize = 6;
pub const DEFAULT_NEUTRAL: usize = 340;

impl Default for SynthSpec {
    fn default() -> Self {
        let markers = |pole: &str| {
            TraitMap::from_fn(|t| {
                (0..DEFAULT_MARKERS_PER_SET)
                    .map(|i| format!("{}_{pole}{i}", t.code().to_lowercase()))
                    .collect()
            })
        };
        SynthSpec {
            high_markers: markers("high"),
            low_markers: markers("low"),
            neutral: (0..DEFAULT_NEUTRAL).map(|i| format!("w{i:03}")).collect(),
            signal: 0.3,
            len_min: 32,
            len_max: 48,
            bigram_smoothing: 0.3,
            bigram_fanout: 16,
            bigram_seed: 0,
            marker_selection: MarkerSelection::FollowPrevious,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("synthetic spec: {m}")));
        if !(self.signal > 0.0 && self.signal <= 1.0) {
            return bad(format!("signal must lie in (0, 1], got {}", self.signal));
        }
        if self.len_min < 4 || self.len_min > self.len_max {
            return bad(format!("need 4 <= len_min <= len_max, got [{}, {}]", self.len_min, self.len_max));
        }
        if !(0.0..=1.0).contains(&self.bigram_smoothing) {
            return bad(format!("bigram_smoothing must lie in [0, 1], got {}", self.bigram_smoothing));
        }
        if self.bigram_fanout == 0 || self.bigram_fanout > self.neutral.len() {
            return bad(format!(
                "bigram_fanout must lie in [1, {}], got {}",
                self.neutral.len(),
                self.bigram_fanout
            ));
        }
        let mut seen = HashSet::new();
        let sets = Trait::ALL
            .iter()
            .flat_map(|&t| [(format!("high_markers.{t}"), &self.high_markers[t]), (format!("low_markers.{t}"), &self.low_markers[t])])
            .chain([("neutral".to_string(), &self.neutral)]);
        for (name, set) in sets {
            if set.is_empty() {
                return bad(format!("{name} is empty"));
            }
            for tok in set {
                if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                    return bad(format!("{name} has token {tok:?}, which is empty or contains whitespace"));
                }
                if SPECIAL_TOKENS.contains(&tok.as_str()) || tok.starts_with(ESCAPE_SENTINEL) {
                    return bad(format!("{name} has reserved token {tok:?}"));
                }
                if !seen.insert(tok.as_str()) {
                    return bad(format!("token {tok:?} appears in more than one place"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Ten categories, high then low for each trait, weighted +1 and -1 on
    /// their own trait.
    pub fn matched_lexicon(&self) -> Result<Lexicon> {
        let mut categories = Vec::with_capacity(10);
        let mut weights = Matrix::zeros(10, 5);
        for t in Trait::ALL {
            let row = categories.len();
            categories.push((format!("{}_high", t.code()), self.high_markers[t].clone()));
            categories.push((format!("{}_low", t.code()), self.low_markers[t].clone()));
            weights[(row, t.index())] = 1.0;
            weights[(row + 1, t.index())] = -1.0;
        }
        Lexicon::new(categories, weights)
    }

    /// Evaluation seed words: the neutral tokens.
    pub fn seed_pool(&self) -> Vec<String> {
        self.neutral.clone()
    }
}

/// Preferred-successor table for neutral tokens.
#[derive(Clone, Debug)]
struct NeutralChain {
    successors: Vec<Vec<usize>>,
    smoothing: f64,
}

impl NeutralChain {
    fn new(spec: &SynthSpec) -> Self {
        let n = spec.neutral.len();
        let mut r = rng::seeded(spec.bigram_seed);
        let successors = (0..n)
            .map(|_| {
                let mut all: Vec<usize> = (0..n).collect();
                // Partial Fisher-Yates: the first `fanout` slots are a uniform sample.
                for i in 0..spec.bigram_fanout {
                    let j = i + rng::below(&mut r, n - i);
                    all.swap(i, j);
                }
                all.truncate(spec.bigram_fanout);
                all
            })
            .collect();
        NeutralChain {
            successors,
            smoothing: spec.bigram_smoothing,
        }
    }

    fn next(&self, prev: Option<usize>, rng: &mut Rng) -> usize {
        match prev {
            Some(p) if !rng::bernoulli(rng, self.smoothing) => {
                let s = &self.successors[p];
                s[rng::below(rng, s.len())]
            }
            _ => rng::below(rng, self.successors.len()),
        }
    }
}

fn synth_document(spec: &SynthSpec, chain: &NeutralChain, rng: &mut Rng) -> Document {
    let latent = TraitMap::from_fn(|_| u8::from(rng::bernoulli(rng, 0.5)));
    let len = spec.len_min + rng::below(rng, spec.len_max - spec.len_min + 1);
    let mut tokens = Vec::with_capacity(len);
    let mut prev = None;
    for _ in 0..len {
        if rng::bernoulli(rng, spec.signal) {
            let t = Trait::ALL[rng::below(rng, 5)];
            let set = if latent[t] == 1 { &spec.high_markers[t] } else { &spec.low_markers[t] };
            let k = match (spec.marker_selection, prev) {
                (MarkerSelection::FollowPrevious, Some(j)) => j % set.len(),
                _ => rng::below(rng, set.len()),
            };
            tokens.push(set[k].clone());
        } else {
            let id = chain.next(prev, rng);
            prev = Some(id);
            tokens.push(spec.neutral[id].clone());
        }
    }
    Document {
        text: tokens.join(" "),
        tokens,
        labels: Some(latent),
        levels: None,
        latent: Some(latent),
    }
}

/// `n_docs` documents, each generated from its own stream of `seed`, plus
/// the matched lexicon.
pub fn synth_corpus(spec: &SynthSpec, n_docs: usize, seed: u64) -> Result<(Vec<Document>, Lexicon)> {
    spec.validate()?;
    let chain = NeutralChain::new(spec);
    let docs = (0..n_docs)
        .into_par_iter()
        .map(|i| synth_document(spec, &chain, &mut rng::stream(seed, i as u64)))
        .collect();
    Ok((docs, spec.matched_lexicon()?))
}

/// The planted polarity vector of a synthetic document.
pub fn oracle_label(doc: &Document) -> Result<TraitMap<u8>> {
    doc.latent.ok_or(Error::MissingOracle)
}

/// Sign of (high markers - low markers) per trait; `None` when they tie,
/// including when the trait has no markers at all.
pub fn counting_oracle(tokens: &[String], spec: &SynthSpec) -> TraitMap<Option<u8>> {
    TraitMap::from_fn(|t| {
        let count = |set: &[String]| tokens.iter().filter(|tok| set.contains(tok)).count();
        let (hi, lo) = (count(&spec.high_markers[t]), count(&spec.low_markers[t]));
        match hi.cmp(&lo) {
            std::cmp::Ordering::Greater => Some(1),
            std::cmp::Ordering::Less => Some(0),
            std::cmp::Ordering::Equal => None,
        }
    })
}
