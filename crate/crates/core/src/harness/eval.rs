//! Lexicon-based evaluation of conditional generation.
//!
//! For every trait and polarity, texts are generated with that trait's bit
//! fixed and the other four bits drawn per text. Each text is scored with the
//! lexicon and bucketed into Low/Medium/High. A shared pool from the
//! unconditional baseline gives the reference distribution.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{generate, BfpCondition, LstmModel, StopReason};
use crate::lexicon::{assign_levels, score_tokens, LevelThresholds, Lexicon, TraitScores};
use crate::rng::{self, Rng};
use crate::traits::{Level, Trait, TraitMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl LevelDistribution {
    pub fn from_levels(levels: impl IntoIterator<Item = Level>) -> Result<Self> {
        let mut counts = [0usize; 3];
        for l in levels {
            counts[l.index()] += 1;
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::InsufficientData("level distribution of zero texts".into()));
        }
        let f = |c: usize| c as f64 / n as f64;
        Ok(LevelDistribution {
            low: f(counts[0]),
            medium: f(counts[1]),
            high: f(counts[2]),
        })
    }

    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::Low => self.low,
            Level::Medium => self.medium,
            Level::High => self.high,
        }
    }

    pub fn total(&self) -> f64 {
        self.low + self.medium + self.high
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub low_condition: LevelDistribution,
    pub high_condition: LevelDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional: Option<LevelDistribution>,
    pub accuracy: f64,
    /// Unconditional texts paired with random polarities and scored like
    /// conditional ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional_accuracy: Option<f64>,
    /// What `unconditional_accuracy` should be given the unconditional
    /// distribution: `(low + high) / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconditional_base_rate: Option<f64>,
}

impl DimensionReport {
    /// Mean over both polarities of how much more often the requested level
    /// occurs than under the unconditional model.
    pub fn margin_over_unconditional(&self) -> Option<f64> {
        let u = self.unconditional?;
        Some(((self.low_condition.low - u.low) + (self.high_condition.high - u.high)) / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dimensions: TraitMap<DimensionReport>,
    pub average_accuracy: f64,
    pub n_per_condition: usize,
}

impl EvalReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table: one block per trait with low, high and unconditional
    /// rows as percentages.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:<14} {:>8} {:>8} {:>8}", "dimension", "condition", "low", "medium", "high");
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        for (t, d) in self.dimensions.iter() {
            let rows = [
                ("low", Some(d.low_condition)),
                ("high", Some(d.high_condition)),
                ("unconditional", d.unconditional),
            ];
            for (i, (name, dist)) in rows.into_iter().enumerate() {
                let label = if i == 0 { t.name() } else { "" };
                match dist {
                    Some(x) => {
                        let _ = writeln!(out, "{label:<18} {name:<14} {:>8} {:>8} {:>8}", pct(x.low), pct(x.medium), pct(x.high));
                    }
                    None => {
                        let _ = writeln!(out, "{label:<18} {name:<14} {:>8} {:>8} {:>8}", "-", "-", "-");
                    }
                }
            }
            let _ = writeln!(out, "{:<18} {:<14} {:>8}", "", "accuracy", pct(d.accuracy));
        }
        let _ = writeln!(out, "average generation accuracy: {}", pct(self.average_accuracy));
        let _ = writeln!(out, "texts per condition: {}", self.n_per_condition);
        out
    }
}

/// Per-trait accuracy: the share of conditional texts whose level matches
/// the requested polarity (Low for 0, High for 1). Both polarities have the
/// same number of texts, so this is the mean of the two matching masses.
pub fn generation_accuracy(report: &EvalReport) -> Result<(TraitMap<f64>, f64)> {
    if report.n_per_condition == 0 {
        return Err(Error::InsufficientData("evaluation report has no conditional texts".into()));
    }
    let per = report
        .dimensions
        .map(|d| (d.low_condition.low + d.high_condition.high) / 2.0);
    let avg = per.0.iter().sum::<f64>() / 5.0;
    Ok((per, avg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub n_per_condition: usize,
    pub temperature: f64,
    /// Generated-length cap; `None` means the generator's training length
    /// less BOS and EOS.
    pub max_len: Option<usize>,
    pub seed: u64,
    pub include_unconditional: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_per_condition: 500,
            temperature: 1.0,
            max_len: None,
            seed: 0,
            include_unconditional: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    /// Trait whose bit was fixed; `None` for unconditional texts.
    pub dimension: Option<Trait>,
    pub condition: Option<BfpCondition>,
    pub seed_word: String,
    pub text: String,
    pub stop: StopReason,
    pub scores: TraitScores,
    pub levels: TraitMap<Level>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub samples: Vec<EvalSample>,
}

const UNCONDITIONAL_POOL: u64 = 10;
const PSEUDO_CONDITIONS: u64 = 11;

fn stream_id(group: u64, index: usize) -> u64 {
    (group << 32) | index as u64
}

struct Scorer<'a> {
    lexicon: &'a Lexicon,
    thresholds: &'a LevelThresholds,
    seed_pool: &'a [String],
    temperature: f64,
}

impl Scorer<'_> {
    fn sample(&self, model: &LstmModel, dimension: Option<Trait>, condition: Option<BfpCondition>, max_len: usize, rng: &mut Rng) -> Result<EvalSample> {
        let g = generate(model, condition.as_ref(), self.seed_pool, self.temperature, max_len, rng)?;
        let scores = score_tokens(&g.tokens, self.lexicon);
        Ok(EvalSample {
            dimension,
            condition,
            seed_word: g.seed_word,
            text: g.tokens.join(" "),
            stop: g.stop,
            levels: assign_levels(&scores, self.thresholds),
            scores,
        })
    }
}

fn default_max_len(model: &LstmModel) -> usize {
    model.config.max_len.saturating_sub(2).max(1)
}

/// Generates and scores `n_per_condition` texts for each of the ten
/// (trait, polarity) conditions, plus one shared unconditional pool.
/// Every text has its own random stream, so results do not depend on how
/// work is spread across threads.
pub fn evaluate_generation(
    model: &LstmModel,
    baseline: Option<&LstmModel>,
    lexicon: &Lexicon,
    thresholds: &LevelThresholds,
    seed_pool: &[String],
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    if !model.is_conditional() {
        return Err(Error::Configuration("the evaluated generator must be conditional".into()));
    }
    let baseline = match (opts.include_unconditional, baseline) {
        (true, None) => {
            return Err(Error::Configuration(
                "an unconditional baseline model is required for the reference rows".into(),
            ))
        }
        (true, Some(b)) if b.is_conditional() => {
            return Err(Error::Configuration("the baseline model must be unconditional".into()))
        }
        (true, b) => b,
        (false, _) => None,
    };
    let n = opts.n_per_condition;
    let scorer = Scorer {
        lexicon,
        thresholds,
        seed_pool,
        temperature: opts.temperature,
    };

    let jobs: Vec<(Trait, u8, usize)> = Trait::ALL
        .iter()
        .flat_map(|&t| (0..2u8).flat_map(move |p| (0..n).map(move |i| (t, p, i))))
        .collect();
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(model));
    let conditional: Vec<EvalSample> = jobs
        .par_iter()
        .map(|&(t, p, i)| {
            let mut r = rng::stream(opts.seed, stream_id((2 * t.index() + usize::from(p)) as u64, i));
            let mut bits: [u8; 5] = std::array::from_fn(|_| u8::from(rng::bernoulli(&mut r, 0.5)));
            bits[t.index()] = p;
            scorer.sample(model, Some(t), Some(BfpCondition(TraitMap(bits))), max_len, &mut r)
        })
        .collect::<Result<_>>()?;

    let unconditional: Vec<EvalSample> = match baseline {
        Some(b) => {
            let max_len = opts.max_len.unwrap_or_else(|| default_max_len(b));
            (0..n)
                .into_par_iter()
                .map(|i| scorer.sample(b, None, None, max_len, &mut rng::stream(opts.seed, stream_id(UNCONDITIONAL_POOL, i))))
                .collect::<Result<_>>()?
        }
        None => Vec::new(),
    };

    let dimensions = build_dimensions(&conditional, &unconditional, n, opts.seed)?;
    let mut report = EvalReport {
        dimensions,
        average_accuracy: 0.0,
        n_per_condition: n,
    };
    report.average_accuracy = generation_accuracy(&report)?.1;
    let mut samples = conditional;
    samples.extend(unconditional);
    Ok(EvalOutcome { report, samples })
}

fn build_dimensions(conditional: &[EvalSample], unconditional: &[EvalSample], n: usize, seed: u64) -> Result<TraitMap<DimensionReport>> {
    if n == 0 {
        return Err(Error::InsufficientData("n_per_condition must be positive".into()));
    }
    // Random polarities for the unconditional consistency check, one per
    // text and trait.
    let pseudo: Vec<[u8; 5]> = (0..unconditional.len())
        .map(|i| {
            let mut r = rng::stream(seed, stream_id(PSEUDO_CONDITIONS, i));
            std::array::from_fn(|_| u8::from(rng::bernoulli(&mut r, 0.5)))
        })
        .collect();
    let mut dims = Vec::with_capacity(5);
    for t in Trait::ALL {
        let dist = |p: u8| {
            LevelDistribution::from_levels(
                conditional
                    .iter()
                    .filter(|s| s.dimension == Some(t) && s.condition.is_some_and(|c| c.bit(t) == p))
                    .map(|s| s.levels[t]),
            )
        };
        let low_condition = dist(0)?;
        let high_condition = dist(1)?;
        let (unc, unc_acc, unc_base) = if unconditional.is_empty() {
            (None, None, None)
        } else {
            let u = LevelDistribution::from_levels(unconditional.iter().map(|s| s.levels[t]))?;
            let hits = unconditional
                .iter()
                .zip(&pseudo)
                .filter(|(s, bits)| matches!((bits[t.index()], s.levels[t]), (0, Level::Low) | (1, Level::High)))
                .count();
            (
                Some(u),
                Some(hits as f64 / unconditional.len() as f64),
                Some((u.low + u.high) / 2.0),
            )
        };
        dims.push(DimensionReport {
            accuracy: (low_condition.low + high_condition.high) / 2.0,
            low_condition,
            high_condition,
            unconditional: unc,
            unconditional_accuracy: unc_acc,
            unconditional_base_rate: unc_base,
        });
    }
    Ok(TraitMap(dims.try_into().expect("five dimensions")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::LstmConfig;
    use crate::lexicon::Cuts;
    use crate::text::build_vocab;

    fn dist(low: f64, medium: f64, high: f64) -> LevelDistribution {
        LevelDistribution { low, medium, high }
    }

    fn report(dims: [(LevelDistribution, LevelDistribution); 5], n: usize) -> EvalReport {
        EvalReport {
            dimensions: TraitMap(dims.map(|(lo, hi)| DimensionReport {
                low_condition: lo,
                high_condition: hi,
                unconditional: None,
                accuracy: (lo.low + hi.high) / 2.0,
                unconditional_accuracy: None,
                unconditional_base_rate: None,
            })),
            average_accuracy: 0.0,
            n_per_condition: n,
        }
    }

    #[test]
    fn perfect_report_has_accuracy_one() {
        let r = report([(dist(1.0, 0.0, 0.0), dist(0.0, 0.0, 1.0)); 5], 10);
        let (per, avg) = generation_accuracy(&r).unwrap();
        assert!(per.iter().all(|(_, &a)| a == 1.0));
        assert_eq!(avg, 1.0);
    }

    #[test]
    fn four_text_toy_by_hand() {
        // Per trait, two low-condition texts and two high-condition texts.
        // E: low -> [Low, Medium], high -> [High, High]: 3 of 4 consistent.
        // Other traits: low -> [High, High], high -> [Low, Medium]: 0 of 4.
        let e = (
            LevelDistribution::from_levels([Level::Low, Level::Medium]).unwrap(),
            LevelDistribution::from_levels([Level::High, Level::High]).unwrap(),
        );
        let other = (
            LevelDistribution::from_levels([Level::High, Level::High]).unwrap(),
            LevelDistribution::from_levels([Level::Low, Level::Medium]).unwrap(),
        );
        let r = report([e, other, other, other, other], 2);
        let (per, avg) = generation_accuracy(&r).unwrap();
        assert_eq!(per[Trait::Extraversion], 0.75);
        assert_eq!(per[Trait::Agreeableness], 0.0);
        assert_eq!(avg, 0.15);
    }

    #[test]
    fn empty_report_is_an_error() {
        let r = report([(dist(1.0, 0.0, 0.0), dist(0.0, 0.0, 1.0)); 5], 0);
        assert!(matches!(generation_accuracy(&r), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn report_json_layout() {
        let mut r = report([(dist(0.5, 0.25, 0.25), dist(0.0, 0.5, 0.5)); 5], 4);
        r.dimensions.0[0].unconditional = Some(dist(0.2, 0.3, 0.5));
        let v: serde_json::Value = serde_json::from_str(&r.to_json_string().unwrap()).unwrap();
        let json = r.to_json_string().unwrap();
        let pos: Vec<usize> = ["\"E\"", "\"A\"", "\"C\"", "\"N\"", "\"O\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(v["dimensions"]["E"]["low_condition"]["low"], 0.5);
        assert_eq!(v["dimensions"]["E"]["unconditional"]["high"], 0.5);
        assert_eq!(v["n_per_condition"], 4);
        let table = r.render_table();
        for t in Trait::ALL {
            assert!(table.contains(t.name()));
        }
        assert_eq!(table.matches("unconditional").count(), 5);
    }

    fn tiny_models() -> (LstmModel, LstmModel, Lexicon, LevelThresholds, Vec<String>) {
        let words: Vec<String> = ["good", "bad", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let vocab = build_vocab([words.clone()].iter().map(|d| d.as_slice()), 1, 100);
        let cfg = LstmConfig {
            embed_dim: 3,
            hidden_dim: 4,
            max_len: 10,
            ..LstmConfig::default()
        };
        let cond = LstmModel::new(cfg.clone(), vocab.clone(), &mut rng::seeded(1)).unwrap();
        let unc = LstmModel::new(cfg.unconditional(), vocab, &mut rng::seeded(2)).unwrap();
        let mut w = crate::numeric::Matrix::zeros(2, 5);
        for t in 0..5 {
            w[(0, t)] = 1.0;
            w[(1, t)] = -1.0;
        }
        let lex = Lexicon::new(vec![("pos".into(), vec!["good".into()]), ("neg".into(), vec!["bad".into()])], w).unwrap();
        let th = LevelThresholds::new(TraitMap([Cuts { low_cut: -0.05, high_cut: 0.05 }; 5])).unwrap();
        (cond, unc, lex, th, vec!["x".into(), "y".into()])
    }

    #[test]
    fn distributions_sum_to_one_and_rows_are_complete() {
        let (cond, unc, lex, th, pool) = tiny_models();
        let opts = EvalOptions {
            n_per_condition: 12,
            seed: 3,
            ..EvalOptions::default()
        };
        let out = evaluate_generation(&cond, Some(&unc), &lex, &th, &pool, &opts).unwrap();
        assert_eq!(out.samples.len(), 12 * 11);
        for (_, d) in out.report.dimensions.iter() {
            for x in [d.low_condition, d.high_condition, d.unconditional.unwrap()] {
                assert!((x.total() - 1.0).abs() < 1e-9);
            }
            assert!((0.0..=1.0).contains(&d.accuracy));
        }
        let e_low = out
            .samples
            .iter()
            .filter(|s| s.dimension == Some(Trait::Extraversion) && s.condition.unwrap().bit(Trait::Extraversion) == 0)
            .count();
        assert_eq!(e_low, 12);
    }

    #[test]
    fn missing_baseline_is_a_configuration_error() {
        let (cond, _, lex, th, pool) = tiny_models();
        let r = evaluate_generation(&cond, None, &lex, &th, &pool, &EvalOptions::default());
        assert!(matches!(r, Err(Error::Configuration(_))));
        let opts = EvalOptions {
            n_per_condition: 3,
            include_unconditional: false,
            ..EvalOptions::default()
        };
        let out = evaluate_generation(&cond, None, &lex, &th, &pool, &opts).unwrap();
        assert!(out.report.dimensions.iter().all(|(_, d)| d.unconditional.is_none()));
    }

    #[test]
    fn report_independent_of_thread_count() {
        let (cond, unc, lex, th, pool) = tiny_models();
        let opts = EvalOptions {
            n_per_condition: 20,
            seed: 9,
            ..EvalOptions::default()
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evaluate_generation(&cond, Some(&unc), &lex, &th, &pool, &opts).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.report.to_json_string().unwrap(), b.report.to_json_string().unwrap());
        assert_eq!(a.samples, b.samples);
    }
}
