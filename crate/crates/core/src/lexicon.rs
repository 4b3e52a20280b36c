//! Dictionary-based trait scoring: category word counting, the linear
//! category-to-trait map, percentile threshold calibration and three-level
//! bucketing.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::traits::{Level, Trait, TraitMap};

pub type TraitScores = TraitMap<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    name: String,
    entries: Vec<String>,
    literals: HashSet<String>,
    prefixes: Vec<String>,
}

impl Category {
    fn new(name: String, raw_entries: Vec<String>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut literals = HashSet::new();
        let mut prefixes = Vec::new();
        for e in raw_entries {
            let pattern = e.strip_suffix('*');
            if e.is_empty() || pattern == Some("") {
                return Err(Error::Validation(format!("category {name:?} has an empty entry")));
            }
            if !seen.insert(e.clone()) {
                continue;
            }
            match pattern {
                Some(p) => prefixes.push(p.to_string()),
                None => {
                    literals.insert(e.clone());
                }
            }
            entries.push(e);
        }
        Ok(Category {
            name,
            entries,
            literals,
            prefixes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// A token matches when it equals a literal entry or starts with a
    /// wildcard entry's prefix. Either way it counts once.
    pub fn matches(&self, token: &str) -> bool {
        self.literals.contains(token) || self.prefixes.iter().any(|p| token.starts_with(p.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    categories: Vec<Category>,
    /// `C x 5`, columns in canonical trait order.
    weights: Matrix,
}

#[derive(Serialize, Deserialize)]
struct LexiconDoc {
    trait_order: Vec<String>,
    categories: Vec<CategoryDoc>,
    weights: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CategoryDoc {
    name: String,
    entries: Vec<String>,
}

impl Lexicon {
    pub fn new(categories: Vec<(String, Vec<String>)>, weights: Matrix) -> Result<Self> {
        if weights.rows() != categories.len() || weights.cols() != 5 {
            return Err(Error::Validation(format!(
                "weight matrix is {}x{} but the lexicon has {} categories and 5 traits",
                weights.rows(),
                weights.cols(),
                categories.len()
            )));
        }
        if !weights.is_finite() {
            return Err(Error::Validation("weight matrix contains non-finite values".into()));
        }
        let mut names = HashSet::new();
        let mut built = Vec::with_capacity(categories.len());
        for (name, entries) in categories {
            if !names.insert(name.clone()) {
                return Err(Error::Validation(format!("duplicate category name {name:?}")));
            }
            built.push(Category::new(name, entries)?);
        }
        Ok(Lexicon {
            categories: built,
            weights,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: LexiconDoc = serde_json::from_str(s)?;
        let order: Vec<Trait> = doc
            .trait_order
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        let distinct: HashSet<Trait> = order.iter().copied().collect();
        if order.len() != 5 || distinct.len() != 5 {
            return Err(Error::Validation("trait_order must list E, A, C, N, O exactly once".into()));
        }
        let mut data = Vec::with_capacity(doc.weights.len() * 5);
        for (i, row) in doc.weights.iter().enumerate() {
            if row.len() != 5 {
                return Err(Error::Validation(format!("weights row {i} has {} values, expected 5", row.len())));
            }
            let mut canonical = [0.0; 5];
            for (t, &w) in order.iter().zip(row) {
                canonical[t.index()] = w;
            }
            data.extend_from_slice(&canonical);
        }
        let weights = Matrix::new(doc.weights.len(), 5, data)?;
        let categories = doc.categories.into_iter().map(|c| (c.name, c.entries)).collect();
        Lexicon::new(categories, weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = LexiconDoc {
            trait_order: Trait::ALL.iter().map(|t| t.code().to_string()).collect(),
            categories: self
                .categories
                .iter()
                .map(|c| CategoryDoc {
                    name: c.name.clone(),
                    entries: c.entries.clone(),
                })
                .collect(),
            weights: (0..self.weights.rows()).map(|r| self.weights.row(r).to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// True if any category matches the token.
    pub fn covers(&self, token: &str) -> bool {
        self.categories.iter().any(|c| c.matches(token))
    }
}

/// Fraction of tokens matching each category, normalized by the document's
/// token count.
pub fn category_frequencies(tokens: &[String], lexicon: &Lexicon) -> Vec<f64> {
    let mut counts = vec![0usize; lexicon.num_categories()];
    for tok in tokens {
        for (count, cat) in counts.iter_mut().zip(&lexicon.categories) {
            if cat.matches(tok) {
                *count += 1;
            }
        }
    }
    let total = tokens.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

/// `freqs^T · weights`.
pub fn trait_scores(freqs: &[f64], lexicon: &Lexicon) -> Result<TraitScores> {
    if freqs.len() != lexicon.num_categories() {
        return Err(Error::InvalidShape(format!(
            "{} frequencies for {} categories",
            freqs.len(),
            lexicon.num_categories()
        )));
    }
    let mut scores = [0.0; 5];
    for (f, c) in freqs.iter().zip(0..lexicon.weights.rows()) {
        for (s, w) in scores.iter_mut().zip(lexicon.weights.row(c)) {
            *s += f * w;
        }
    }
    Ok(TraitMap(scores))
}

pub fn score_tokens(tokens: &[String], lexicon: &Lexicon) -> TraitScores {
    trait_scores(&category_frequencies(tokens, lexicon), lexicon).expect("frequency length matches lexicon")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuts {
    pub low_cut: f64,
    pub high_cut: f64,
}

/// Per-trait low/high cut points. JSON form: `{"E": {"low_cut":..,"high_cut":..}, ...}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelThresholds(TraitMap<Cuts>);

impl LevelThresholds {
    pub fn new(cuts: TraitMap<Cuts>) -> Result<Self> {
        for (t, c) in cuts.iter() {
            if !(c.low_cut.is_finite() && c.high_cut.is_finite()) || c.low_cut > c.high_cut {
                return Err(Error::Validation(format!(
                    "trait {t}: need finite low_cut <= high_cut, got ({}, {})",
                    c.low_cut, c.high_cut
                )));
            }
        }
        Ok(LevelThresholds(cuts))
    }

    pub fn cuts(&self, t: Trait) -> Cuts {
        self.0[t]
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        LevelThresholds::new(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.0)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// The `ceil(p·N)`-th smallest value (1-based), clamped to `[1, N]`.
/// `sorted` must be ascending.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // Guard against p·N landing a hair above an integer through rounding.
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Nearest-rank percentile cuts per trait over a reference score collection.
pub fn calibrate_thresholds(scores: &[TraitScores], p_low: f64, p_high: f64) -> Result<LevelThresholds> {
    if scores.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "threshold calibration needs at least 3 scores per trait, got {}",
            scores.len()
        )));
    }
    if !(0.0 < p_low && p_low <= p_high && p_high <= 1.0) {
        return Err(Error::Validation(format!("percentiles must satisfy 0 < p_low <= p_high <= 1, got ({p_low}, {p_high})")));
    }
    let cuts = TraitMap::from_fn(|t| {
        let mut col: Vec<f64> = scores.iter().map(|s| s[t]).collect();
        col.sort_by(f64::total_cmp);
        Cuts {
            low_cut: nearest_rank(&col, p_low),
            high_cut: nearest_rank(&col, p_high),
        }
    });
    LevelThresholds::new(cuts)
}

pub fn tertile_thresholds(scores: &[TraitScores]) -> Result<LevelThresholds> {
    calibrate_thresholds(scores, 1.0 / 3.0, 2.0 / 3.0)
}

pub fn level_of(score: f64, cuts: Cuts) -> Level {
    if score < cuts.low_cut {
        Level::Low
    } else if score > cuts.high_cut {
        Level::High
    } else {
        Level::Medium
    }
}

pub fn assign_levels(scores: &TraitScores, thresholds: &LevelThresholds) -> TraitMap<Level> {
    TraitMap::from_fn(|t| level_of(scores[t], thresholds.cuts(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn pos_neg() -> Lexicon {
        let mut w = Matrix::zeros(2, 5);
        w[(0, 0)] = 1.0;
        w[(1, 0)] = -1.0;
        Lexicon::new(
            vec![("pos".into(), toks(&["good"])), ("neg".into(), toks(&["bad"]))],
            w,
        )
        .unwrap()
    }

    #[test]
    fn load_validation() {
        let ok = r#"{"trait_order":["E","A","C","N","O"],
            "categories":[{"name":"a","entries":["x","x","y*"]},{"name":"b","entries":["z"]}],
            "weights":[[1,0,0,0,0],[0,1,0,0,0]]}"#;
        let lex = Lexicon::from_json_str(ok).unwrap();
        assert_eq!(lex.categories()[0].entries(), &toks(&["x", "y*"])[..]);

        let bad_shape = r#"{"trait_order":["E","A","C","N","O"],
            "categories":[{"name":"a","entries":["x"]},{"name":"b","entries":["z"]}],
            "weights":[[1,0,0,0,0],[0,1,0,0,0],[0,0,0,0,0]]}"#;
        assert!(matches!(Lexicon::from_json_str(bad_shape), Err(Error::Validation(_))));

        let dup = r#"{"trait_order":["E","A","C","N","O"],
            "categories":[{"name":"a","entries":["x"]},{"name":"a","entries":["z"]}],
            "weights":[[1,0,0,0,0],[0,1,0,0,0]]}"#;
        assert!(matches!(Lexicon::from_json_str(dup), Err(Error::Validation(m)) if m.contains("\"a\"")));

        let empty = r#"{"trait_order":["E","A","C","N","O"],
            "categories":[{"name":"a","entries":[""]}],
            "weights":[[1,0,0,0,0]]}"#;
        assert!(Lexicon::from_json_str(empty).is_err());
    }

    #[test]
    fn trait_order_is_respected() {
        let doc = r#"{"trait_order":["O","N","C","A","E"],
            "categories":[{"name":"a","entries":["x"]}],
            "weights":[[5,4,3,2,1]]}"#;
        let lex = Lexicon::from_json_str(doc).unwrap();
        assert_eq!(lex.weights().row(0), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn prefix_entries() {
        let lex = Lexicon::new(vec![("h".into(), toks(&["happ*"]))], Matrix::zeros(1, 5)).unwrap();
        assert!(lex.categories()[0].matches("happy"));
        assert!(!lex.categories()[0].matches("hap"));
    }

    #[test]
    fn frequencies_and_scores() {
        let lex = pos_neg();
        assert_eq!(category_frequencies(&[], &lex), vec![0.0, 0.0]);
        let f = category_frequencies(&toks(&["good", "good", "bad", "x"]), &lex);
        assert_eq!(f, vec![0.5, 0.25]);
        let s = trait_scores(&f, &lex).unwrap();
        assert_eq!(s.0, [0.25, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(trait_scores(&[0.0, 0.0], &lex).unwrap().0, [0.0; 5]);
    }

    #[test]
    fn token_counts_in_every_matching_category() {
        let lex = Lexicon::new(
            vec![("a".into(), toks(&["joy"])), ("b".into(), toks(&["jo*"]))],
            Matrix::zeros(2, 5),
        )
        .unwrap();
        assert_eq!(category_frequencies(&toks(&["joy", "x"]), &lex), vec![0.5, 0.5]);
    }

    #[test]
    fn nearest_rank_calibration() {
        let scores: Vec<TraitScores> = (1..=9).map(|i| TraitMap([i as f64; 5])).collect();
        let th = tertile_thresholds(&scores).unwrap();
        assert_eq!(th.cuts(Trait::Extraversion), Cuts { low_cut: 3.0, high_cut: 6.0 });

        let same: Vec<TraitScores> = (0..5).map(|_| TraitMap([2.0; 5])).collect();
        let th = tertile_thresholds(&same).unwrap();
        assert_eq!(th.cuts(Trait::Openness), Cuts { low_cut: 2.0, high_cut: 2.0 });
        assert_eq!(assign_levels(&TraitMap([2.0; 5]), &th).0, [Level::Medium; 5]);

        assert!(matches!(tertile_thresholds(&scores[..2]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn level_boundaries() {
        let c = Cuts { low_cut: 3.0, high_cut: 6.0 };
        assert_eq!(level_of(3.0, c), Level::Medium);
        assert_eq!(level_of(6.0, c), Level::Medium);
        assert_eq!(level_of(7.0, c), Level::High);
        assert_eq!(level_of(2.9, c), Level::Low);
    }

    #[test]
    fn thresholds_json_layout() {
        let scores: Vec<TraitScores> = (1..=9).map(|i| TraitMap([i as f64; 5])).collect();
        let th = tertile_thresholds(&scores).unwrap();
        let s = th.to_json_string().unwrap();
        assert!(s.contains("\"low_cut\": 3.0"));
        assert_eq!(LevelThresholds::from_json_str(&s).unwrap(), th);
        assert!(LevelThresholds::from_json_str(
            r#"{"E":{"low_cut":2,"high_cut":1},"A":{"low_cut":0,"high_cut":1},"C":{"low_cut":0,"high_cut":1},"N":{"low_cut":0,"high_cut":1},"O":{"low_cut":0,"high_cut":1}}"#
        )
        .is_err());
    }
}
