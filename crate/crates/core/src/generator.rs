//! Conditional LSTM language model.
//!
//! A single LSTM layer reads, at every step, the embedding of the previous
//! token concatenated with the five condition bits. The hidden state is
//! projected onto the vocabulary. Training uses teacher forcing with masked
//! cross-entropy; decoding samples from a seed word until EOS, a length cap,
//! or a detected repetition.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numeric::{
    activate, activation_backward, affine, affine_backward_accumulate, clip_model_grads, masked_cross_entropy,
    weighted_cross_entropy, xavier_init, Activation, Adam, HasParameters, Matrix, Parameter,
};
use crate::numeric::ops::softmax_in_place;
use crate::rng::{self, Rng, RESERVED_STREAM_BASE};
use crate::text::{build_vocab, encode, Document, EncodedText, TokenizeMode, Vocabulary, BOS, EOS, NUM_SPECIALS};
use crate::traits::{Trait, TraitMap};

pub const CHECKPOINT_KIND: &str = "lstm";
pub const CONDITION_DIM: usize = 5;

/// Below this temperature decoding is greedy.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// High (1) or low (0) polarity per trait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BfpCondition(pub TraitMap<u8>);

impl BfpCondition {
    pub fn new(bits: [u8; 5]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Validation(format!("condition bits must be 0 or 1, got {bits:?}")));
        }
        Ok(BfpCondition(TraitMap(bits)))
    }

    pub fn bit(&self, t: Trait) -> u8 {
        self.0[t]
    }

    /// All 32 conditions in binary order.
    pub fn all() -> impl Iterator<Item = BfpCondition> {
        (0u8..32).map(|n| BfpCondition(TraitMap(std::array::from_fn(|d| (n >> (4 - d)) & 1))))
    }

    fn as_input(&self) -> [f64; 5] {
        self.0 .0.map(f64::from)
    }
}

pub const CONDITION_SYNTAX: &str = "E=<0|1>,A=<0|1>,C=<0|1>,N=<0|1>,O=<0|1> (each trait exactly once, any order)";

impl FromStr for BfpCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: String| Error::Validation(format!("malformed condition {s:?}: {why}; expected {CONDITION_SYNTAX}"));
        let mut bits: [Option<u8>; 5] = [None; 5];
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(format!("{part:?} is not KEY=VALUE")))?;
            let t: Trait = k.trim().parse().map_err(|_| bad(format!("unknown trait {:?}", k.trim())))?;
            let b = match v.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("value {other:?} is not 0 or 1"))),
            };
            if bits[t.index()].replace(b).is_some() {
                return Err(bad(format!("trait {t} given twice")));
            }
        }
        let mut out = [0u8; 5];
        for (t, slot) in Trait::ALL.into_iter().zip(bits) {
            out[t.index()] = slot.ok_or_else(|| bad(format!("trait {t} missing")))?;
        }
        Ok(BfpCondition(TraitMap(out)))
    }
}

impl fmt::Display for BfpCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(t, b)| format!("{t}={b}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// 5 for conditional models, 0 for the unconditional baseline.
    pub cond_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub clip_norm: f64,
    pub min_count: usize,
    pub max_vocab: usize,
    pub tokenize: TokenizeMode,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            embed_dim: 32,
            hidden_dim: 128,
            cond_dim: CONDITION_DIM,
            vocab_size: 0,
            max_len: 50,
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 1.0,
            clip_norm: 5.0,
            min_count: 2,
            max_vocab: 20_000,
            tokenize: TokenizeMode::Whitespace,
        }
    }
}

impl LstmConfig {
    pub fn unconditional(mut self) -> Self {
        self.cond_dim = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Validation("embed_dim and hidden_dim must be positive".into()));
        }
        if self.cond_dim != 0 && self.cond_dim != CONDITION_DIM {
            return Err(Error::Validation(format!("cond_dim must be 0 or 5, got {}", self.cond_dim)));
        }
        if self.max_len < 2 || self.batch_size == 0 {
            return Err(Error::Validation("max_len must be >= 2 and batch_size positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub vocab: Vocabulary,
    pub embedding: Parameter,
    /// `(k + cond_dim + H) x 4H`, gate column blocks ordered i, f, g, o.
    pub gate_weights: Parameter,
    pub gate_bias: Parameter,
    pub out_weights: Parameter,
    pub out_bias: Parameter,
}

impl HasParameters for LstmModel {
    fn parameters(&self) -> Vec<(String, &Parameter)> {
        vec![
            ("embedding".into(), &self.embedding),
            ("lstm.weight".into(), &self.gate_weights),
            ("lstm.bias".into(), &self.gate_bias),
            ("output.weight".into(), &self.out_weights),
            ("output.bias".into(), &self.out_bias),
        ]
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![
            ("embedding".into(), &mut self.embedding),
            ("lstm.weight".into(), &mut self.gate_weights),
            ("lstm.bias".into(), &mut self.gate_bias),
            ("output.weight".into(), &mut self.out_weights),
            ("output.bias".into(), &mut self.out_bias),
        ]
    }
}

/// Everything one LSTM step computed, retained for backpropagation.
#[derive(Clone, Debug)]
pub struct StepCache {
    input: Matrix,
    z: [Matrix; 4],
    gates: [Matrix; 4],
    c_prev: Matrix,
    c: Matrix,
    tanh_c: Matrix,
    pub h: Matrix,
}

const GATE_ACTIVATIONS: [Activation; 4] = [
    Activation::Sigmoid,
    Activation::Sigmoid,
    Activation::Tanh,
    Activation::Sigmoid,
];

/// One training example: an encoded text plus its condition (if any).
pub type Example<'a> = (&'a EncodedText, Option<&'a BfpCondition>);

impl LstmModel {
    pub fn new(mut config: LstmConfig, vocab: Vocabulary, rng: &mut Rng) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let (k, h, c, v) = (config.embed_dim, config.hidden_dim, config.cond_dim, vocab.len());
        let embedding = Parameter::new(xavier_init(v, k, rng)?);
        let gate_weights = Parameter::new(xavier_init(k + c + h, 4 * h, rng)?);
        let mut gate_bias = Matrix::zeros(1, 4 * h);
        gate_bias.row_mut(0)[h..2 * h].fill(1.0);
        let out_weights = Parameter::new(xavier_init(h, v, rng)?);
        Ok(LstmModel {
            config,
            vocab,
            embedding,
            gate_weights,
            gate_bias: Parameter::new(gate_bias),
            out_weights,
            out_bias: Parameter::new(Matrix::zeros(1, v)),
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.config.cond_dim == CONDITION_DIM
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.embed_dim + self.config.cond_dim
    }

    fn check_condition(&self, condition: Option<&BfpCondition>) -> Result<()> {
        let got = if condition.is_some() { CONDITION_DIM } else { 0 };
        if got != self.config.cond_dim {
            return Err(Error::ConditionArity {
                expected: self.config.cond_dim,
                got,
            });
        }
        Ok(())
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> EncodedText {
        encode(tokens, &self.vocab, self.config.max_len)
    }

    /// One LSTM step on a batch: `x` is `B x (k + cond_dim)`, `h` and `c`
    /// are `B x H`.
    pub fn lstm_step(&self, x: &Matrix, h: &Matrix, c: &Matrix) -> Result<(Matrix, Matrix)> {
        let cache = self.step_cached(x, h, c)?;
        Ok((cache.h, cache.c))
    }

    fn step_cached(&self, x: &Matrix, h: &Matrix, c: &Matrix) -> Result<StepCache> {
        let hd = self.hidden_dim();
        if x.cols() != self.input_dim() || h.cols() != hd || c.shape() != h.shape() || x.rows() != h.rows() {
            return Err(Error::InvalidShape(format!(
                "lstm_step: x {:?}, h {:?}, c {:?} for input dim {} and hidden dim {hd}",
                x.shape(),
                h.shape(),
                c.shape(),
                self.input_dim()
            )));
        }
        let input = Matrix::hstack(&[x, h])?;
        let zall = affine(&input, &self.gate_weights.value, &self.gate_bias.value)?;
        let z: [Matrix; 4] = std::array::from_fn(|g| zall.columns(g * hd, (g + 1) * hd));
        let mut gates = Vec::with_capacity(4);
        for (zg, act) in z.iter().zip(GATE_ACTIVATIONS) {
            gates.push(activate(act, zg)?);
        }
        let gates: [Matrix; 4] = gates.try_into().expect("four gates");
        let [i, f, g, o] = &gates;
        let c_new = f.hadamard(c)?.add(&i.hadamard(g)?)?;
        let tanh_c = activate(Activation::Tanh, &c_new)?;
        let h_new = o.hadamard(&tanh_c)?;
        Ok(StepCache {
            input,
            z,
            gates,
            c_prev: c.clone(),
            c: c_new,
            tanh_c,
            h: h_new,
        })
    }

    /// Step input rows: token embedding followed by the condition bits.
    fn step_input(&self, tokens: &[usize], conditions: &[Option<&BfpCondition>]) -> Result<Matrix> {
        let k = self.config.embed_dim;
        let mut x = Matrix::zeros(tokens.len(), self.input_dim());
        for (b, (&id, cond)) in tokens.iter().zip(conditions).enumerate() {
            if id >= self.vocab.len() {
                return Err(Error::InvalidId {
                    id,
                    size: self.vocab.len(),
                });
            }
            let row = x.row_mut(b);
            row[..k].copy_from_slice(self.embedding.value.row(id));
            if let Some(c) = cond {
                row[k..].copy_from_slice(&c.as_input());
            }
        }
        Ok(x)
    }

    /// Logits for positions `0..T-1` of one encoded text, row `t` predicting
    /// `ids[t+1]`.
    pub fn generator_forward(&self, encoded: &EncodedText, condition: Option<&BfpCondition>) -> Result<Matrix> {
        self.check_condition(condition)?;
        let steps = encoded.ids.len().saturating_sub(1);
        let hd = self.hidden_dim();
        let mut h = Matrix::zeros(1, hd);
        let mut c = Matrix::zeros(1, hd);
        let mut logits = Matrix::zeros(steps, self.vocab.len());
        for t in 0..steps {
            let x = self.step_input(&encoded.ids[t..t + 1], &[condition])?;
            (h, c) = self.lstm_step(&x, &h, &c)?;
            let out = affine(&h, &self.out_weights.value, &self.out_bias.value)?;
            logits.row_mut(t).copy_from_slice(out.row(0));
        }
        Ok(logits)
    }

    /// Mean over the batch of each text's masked cross-entropy. With
    /// `backward`, gradients are accumulated into the parameters.
    pub fn batch_loss(&mut self, batch: &[Example<'_>], backward: bool) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch"));
        }
        for (_, cond) in batch {
            self.check_condition(*cond)?;
        }
        let bsz = batch.len();
        let longest = batch.iter().map(|(e, _)| e.valid_len()).max().unwrap_or(0);
        let steps = longest.saturating_sub(1);
        let target_counts: Vec<usize> = batch
            .iter()
            .map(|(e, _)| e.mask.iter().skip(1).filter(|&&m| m != 0).count())
            .collect();
        if target_counts.contains(&0) {
            return Err(Error::DegenerateMask);
        }
        let conditions: Vec<Option<&BfpCondition>> = batch.iter().map(|(_, c)| *c).collect();

        let hd = self.hidden_dim();
        let mut h = Matrix::zeros(bsz, hd);
        let mut c = Matrix::zeros(bsz, hd);
        let mut caches = Vec::with_capacity(if backward { steps } else { 0 });
        let mut dlogits = Vec::with_capacity(if backward { steps } else { 0 });
        let mut loss = 0.0;
        for t in 0..steps {
            let tokens: Vec<usize> = batch.iter().map(|(e, _)| e.ids[t]).collect();
            let x = self.step_input(&tokens, &conditions)?;
            let cache = self.step_cached(&x, &h, &c)?;
            let logits = affine(&cache.h, &self.out_weights.value, &self.out_bias.value)?;
            let targets: Vec<usize> = batch.iter().map(|(e, _)| e.ids[t + 1]).collect();
            let weights: Vec<f64> = batch
                .iter()
                .zip(&target_counts)
                .map(|((e, _), &n)| f64::from(e.mask[t + 1]) / (n * bsz) as f64)
                .collect();
            let ce = weighted_cross_entropy(&logits, &targets, &weights)?;
            loss += ce.loss;
            h = cache.h.clone();
            c = cache.c.clone();
            if backward {
                caches.push((cache, tokens));
                dlogits.push(ce.grad);
            }
        }
        if backward {
            self.backward(&caches, &dlogits)?;
        }
        Ok(loss)
    }

    fn backward(&mut self, caches: &[(StepCache, Vec<usize>)], dlogits: &[Matrix]) -> Result<()> {
        let hd = self.hidden_dim();
        let k = self.config.embed_dim;
        let in_dim = self.input_dim();
        let bsz = dlogits.first().map_or(0, Matrix::rows);
        let mut dh_next = Matrix::zeros(bsz, hd);
        let mut dc_next = Matrix::zeros(bsz, hd);
        for ((cache, tokens), dl) in caches.iter().zip(dlogits).rev() {
            let mut dh = affine_backward_accumulate(
                &cache.h,
                &self.out_weights.value,
                dl,
                &mut self.out_weights.grad,
                &mut self.out_bias.grad,
            )?;
            dh.add_assign(&dh_next)?;

            let [i, f, g, o] = &cache.gates;
            let d_o = dh.hadamard(&cache.tanh_c)?;
            let d_tanh_c = dh.hadamard(o)?;
            let mut dc = activation_backward(Activation::Tanh, &cache.c, &cache.tanh_c, &d_tanh_c)?;
            dc.add_assign(&dc_next)?;
            let d_i = dc.hadamard(g)?;
            let d_g = dc.hadamard(i)?;
            let d_f = dc.hadamard(&cache.c_prev)?;
            dc_next = dc.hadamard(f)?;

            let dgates = [d_i, d_f, d_g, d_o];
            let mut dz = Matrix::zeros(bsz, 4 * hd);
            for (gi, ((zg, yg), dg)) in cache.z.iter().zip(&cache.gates).zip(&dgates).enumerate() {
                dz.set_columns(gi * hd, &activation_backward(GATE_ACTIVATIONS[gi], zg, yg, dg)?);
            }
            let dinput = affine_backward_accumulate(
                &cache.input,
                &self.gate_weights.value,
                &dz,
                &mut self.gate_weights.grad,
                &mut self.gate_bias.grad,
            )?;
            for (b, &id) in tokens.iter().enumerate() {
                for (e, &gi) in self.embedding.grad.row_mut(id).iter_mut().zip(&dinput.row(b)[..k]) {
                    *e += gi;
                }
            }
            dh_next = dinput.columns(in_dim, in_dim + hd);
        }
        Ok(())
    }

    /// Feeds one token and returns next-token logits.
    pub fn step_logits(&self, token: usize, condition: Option<&BfpCondition>, state: &mut LstmState) -> Result<Vec<f64>> {
        let x = self.step_input(&[token], &[condition])?;
        let (h, c) = self.lstm_step(&x, &state.h, &state.c)?;
        state.h = h;
        state.c = c;
        Ok(affine(&state.h, &self.out_weights.value, &self.out_bias.value)?.into_data())
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState {
            h: Matrix::zeros(1, self.hidden_dim()),
            c: Matrix::zeros(1, self.hidden_dim()),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<LstmConfig> {
        Checkpoint::capture(CHECKPOINT_KIND, self.config.clone(), self.vocab.stored_tokens().to_vec(), self)
    }

    pub fn from_checkpoint(ck: &Checkpoint<LstmConfig>) -> Result<Self> {
        let vocab = Vocabulary::from_stored(ck.vocab.clone())?;
        if ck.config.vocab_size != vocab.len() {
            return Err(Error::Validation(format!(
                "config vocab_size {} but checkpoint stores {} tokens",
                ck.config.vocab_size,
                vocab.len()
            )));
        }
        let mut model = LstmModel::new(ck.config.clone(), vocab, &mut rng::seeded(0))?;
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path, CHECKPOINT_KIND)?)
    }
}

#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

/// Masked cross-entropy of `generator_forward` logits against `ids[1..]`.
pub fn generator_loss(logits: &Matrix, encoded: &EncodedText) -> Result<f64> {
    let n = encoded.ids.len().saturating_sub(1);
    if logits.rows() != n {
        return Err(Error::InvalidShape(format!("{} logit rows for {n} targets", logits.rows())));
    }
    Ok(masked_cross_entropy(logits, &encoded.ids[1..], &encoded.mask[1..])?.loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainingReport {
    pub epoch_losses: Vec<f64>,
}

fn conditions_for(docs: &[Document], conditional: bool) -> Result<Vec<Option<BfpCondition>>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            if conditional {
                d.labels.map(|l| Some(BfpCondition(l))).ok_or(Error::LabelMissing(i))
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Teacher-forced minibatch training with Adam and global-norm clipping.
pub fn train_generator(docs: &[Document], config: &LstmConfig, seed: u64) -> Result<(LstmModel, GeneratorTrainingReport)> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::InsufficientData("generator training needs at least one document".into()));
    }
    let conditional = config.cond_dim == CONDITION_DIM;
    let conditions = conditions_for(docs, conditional)?;
    let vocab = build_vocab(docs.iter().map(|d| d.tokens.as_slice()), config.min_count, config.max_vocab);
    let mut model = LstmModel::new(config.clone(), vocab, &mut rng::stream(seed, RESERVED_STREAM_BASE + 1))?;
    let encoded: Vec<EncodedText> = docs.iter().map(|d| model.encode_tokens(&d.tokens)).collect();

    let adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        rng::shuffle(&mut rng::stream(seed, RESERVED_STREAM_BASE + 16 + epoch as u64), &mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| (&encoded[i], conditions[i].as_ref())).collect();
            model.zero_grad();
            let loss = model.batch_loss(&batch, true)?;
            total += loss * chunk.len() as f64;
            clip_model_grads(&mut model, config.clip_norm);
            adam.step_all(&mut model)?;
        }
        epoch_losses.push(total / docs.len() as f64);
    }
    Ok((model, GeneratorTrainingReport { epoch_losses }))
}

/// Where per-document conditions come from when scoring a corpus.
#[derive(Clone, Copy, Debug)]
pub enum ConditionSource {
    /// The documents' own labels.
    Labels,
    Fixed(BfpCondition),
    /// Unconditional model.
    None,
}

/// `exp` of the mean per-text cross-entropy over the corpus.
pub fn perplexity(model: &LstmModel, docs: &[Document], source: ConditionSource) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::InsufficientData("perplexity of an empty corpus".into()));
    }
    let mut total = 0.0;
    for (i, d) in docs.iter().enumerate() {
        let cond = match source {
            ConditionSource::Labels => Some(BfpCondition(d.labels.ok_or(Error::LabelMissing(i))?)),
            ConditionSource::Fixed(c) => Some(c),
            ConditionSource::None => None,
        };
        let enc = model.encode_tokens(&d.tokens);
        total += generator_loss(&model.generator_forward(&enc, cond.as_ref())?, &enc)?;
    }
    Ok((total / docs.len() as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndOfSequence,
    MaxLength,
    RepeatedToken,
    RepeatedPhrase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub seed_word: String,
    pub tokens: Vec<String>,
    pub stop: StopReason,
}

/// Copies of one token in a row that trigger the repetition stop.
pub const REPEAT_RUN: usize = 3;
/// Length of the phrase whose recurrence triggers the repetition stop.
pub const REPEAT_NGRAM: usize = 4;

fn repetition(ids: &[usize]) -> Option<StopReason> {
    let n = ids.len();
    if n >= REPEAT_RUN && ids[n - REPEAT_RUN..].iter().all(|&t| t == ids[n - 1]) {
        return Some(StopReason::RepeatedToken);
    }
    if n > REPEAT_NGRAM {
        let tail = &ids[n - REPEAT_NGRAM..];
        if ids[..n - 1].windows(REPEAT_NGRAM).any(|w| w == tail) {
            return Some(StopReason::RepeatedPhrase);
        }
    }
    None
}

fn sample_next(logits: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    let allowed = |id: usize| id >= NUM_SPECIALS || id == EOS;
    if temperature < GREEDY_TEMPERATURE {
        let mut best = EOS;
        for (id, &l) in logits.iter().enumerate() {
            if allowed(id) && l > logits[best] {
                best = id;
            }
        }
        return best;
    }
    let ids: Vec<usize> = (0..logits.len()).filter(|&id| allowed(id)).collect();
    let mut probs: Vec<f64> = ids.iter().map(|&id| logits[id] / temperature).collect();
    softmax_in_place(&mut probs);
    let u = rng::uniform(rng);
    let mut acc = 0.0;
    for (&id, &p) in ids.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return id;
        }
    }
    *ids.last().expect("EOS is always allowed")
}

/// Samples one text. The seed word is drawn uniformly from `seed_pool` and
/// counts toward `max_len`. When a repetition stop fires, the repeated tail
/// is trimmed: the final copy of a token run, or the final repeated phrase.
pub fn generate(
    model: &LstmModel,
    condition: Option<&BfpCondition>,
    seed_pool: &[String],
    temperature: f64,
    max_len: usize,
    rng: &mut Rng,
) -> Result<Generation> {
    model.check_condition(condition)?;
    if seed_pool.is_empty() {
        return Err(Error::SeedPool("seed pool is empty".into()));
    }
    let seed_ids: Vec<usize> = seed_pool
        .iter()
        .map(|w| match model.vocab.get(w) {
            Some(id) if id >= NUM_SPECIALS => Ok(id),
            _ => Err(Error::SeedPool(format!("seed word {w:?} is not a regular vocabulary token"))),
        })
        .collect::<Result<_>>()?;
    if max_len == 0 {
        return Err(Error::Validation("max_len must be at least 1".into()));
    }

    let pick = rng::below(rng, seed_ids.len());
    let seed_id = seed_ids[pick];
    let mut state = model.initial_state();
    model.step_logits(BOS, condition, &mut state)?;
    let mut logits = model.step_logits(seed_id, condition, &mut state)?;
    let mut out = vec![seed_id];
    let stop = loop {
        if out.len() >= max_len {
            break StopReason::MaxLength;
        }
        let next = sample_next(&logits, temperature, rng);
        if next == EOS {
            break StopReason::EndOfSequence;
        }
        out.push(next);
        match repetition(&out) {
            Some(StopReason::RepeatedToken) => {
                out.pop();
                break StopReason::RepeatedToken;
            }
            Some(reason) => {
                out.truncate(out.len() - REPEAT_NGRAM);
                break reason;
            }
            None => {}
        }
        logits = model.step_logits(next, condition, &mut state)?;
    };
    let tokens = out
        .iter()
        .map(|&id| model.vocab.token(id).map(str::to_string))
        .collect::<Result<_>>()?;
    Ok(Generation {
        seed_word: seed_pool[pick].clone(),
        tokens,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gradient_check, sigmoid, GradCheckConfig};

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn vocab(n: usize) -> Vocabulary {
        let words: Vec<String> = (0..n).map(|i| format!("w{i:02}")).collect();
        build_vocab([words].iter().map(|d| d.as_slice()), 1, 1000)
    }

    fn model(cond_dim: usize, hidden: usize, seed: u64) -> LstmModel {
        let cfg = LstmConfig {
            embed_dim: 4,
            hidden_dim: hidden,
            cond_dim,
            max_len: 8,
            ..LstmConfig::default()
        };
        LstmModel::new(cfg, vocab(16), &mut rng::seeded(seed)).unwrap()
    }

    #[test]
    fn condition_parsing() {
        let c: BfpCondition = "E=1,A=0,C=1,N=0,O=1".parse().unwrap();
        assert_eq!(c.0 .0, [1, 0, 1, 0, 1]);
        let c2: BfpCondition = "O=1, N=0,C=1,A=0,E=1".parse().unwrap();
        assert_eq!(c, c2);
        assert_eq!(c.to_string(), "E=1,A=0,C=1,N=0,O=1");
        for bad in ["E=1,A=0,C=1,N=0", "E=2,A=0,C=1,N=0,O=1", "E=1,E=0,C=1,N=0,O=1", "X=1", ""] {
            assert!(bad.parse::<BfpCondition>().is_err(), "{bad}");
        }
        assert_eq!(BfpCondition::all().count(), 32);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = model(5, 3, 1);
        let b = m.gate_bias.value.row(0);
        assert_eq!(&b[3..6], &[1.0; 3]);
        assert!(b[..3].iter().chain(&b[6..]).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_weights_step() {
        let mut m = model(5, 3, 1);
        m.gate_weights.value.fill(0.0);
        m.gate_bias.value.fill(0.0);
        let x = Matrix::filled(1, 9, 0.3);
        let h = Matrix::row_vector(&[0.2, -0.1, 0.5]);
        let (h1, c1) = m.lstm_step(&x, &h, &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(h1.data(), &[0.0; 3]);
        assert_eq!(c1.data(), &[0.0; 3]);
        let c = Matrix::row_vector(&[1.0, -2.0, 0.4]);
        let (_, c1) = m.lstm_step(&x, &h, &c).unwrap();
        assert_eq!(c1.data(), &[0.5, -1.0, 0.2]);
        assert!(matches!(m.lstm_step(&Matrix::zeros(1, 4), &h, &c), Err(Error::InvalidShape(_))));
    }

    fn scalar_step(m: &LstmModel, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let input: Vec<f64> = x.iter().chain(h).copied().collect();
        let w = &m.gate_weights.value;
        let b = &m.gate_bias.value;
        let pre = |col: usize| -> f64 { b[(0, col)] + input.iter().enumerate().map(|(r, v)| v * w[(r, col)]).sum::<f64>() };
        let mut h_new = vec![0.0; hd];
        let mut c_new = vec![0.0; hd];
        for j in 0..hd {
            let i = sigmoid(pre(j));
            let f = sigmoid(pre(hd + j));
            let g = pre(2 * hd + j).tanh();
            let o = sigmoid(pre(3 * hd + j));
            c_new[j] = f * c[j] + i * g;
            h_new[j] = o * c_new[j].tanh();
        }
        (h_new, c_new)
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let m = model(5, 3, 9);
        let mut r = rng::seeded(2);
        let x: Vec<f64> = (0..9).map(|_| rng::uniform(&mut r) - 0.5).collect();
        let h: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r) - 0.5).collect();
        let c: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r) * 2.0 - 1.0).collect();
        let (eh, ec) = scalar_step(&m, &x, &h, &c);
        let (gh, gc) = m
            .lstm_step(&Matrix::row_vector(&x), &Matrix::row_vector(&h), &Matrix::row_vector(&c))
            .unwrap();
        for j in 0..3 {
            assert!((gh[(0, j)] - eh[j]).abs() < 1e-12);
            assert!((gc[(0, j)] - ec[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_hand_unroll() {
        let m = model(5, 3, 4);
        let cond: BfpCondition = "E=1,A=1,C=0,N=0,O=1".parse().unwrap();
        let enc = m.encode_tokens(&toks(&["w03"]));
        let logits = m.generator_forward(&enc, Some(&cond)).unwrap();
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for t in 0..3 {
            let mut x = m.embedding.value.row(enc.ids[t]).to_vec();
            x.extend(cond.as_input());
            (h, c) = scalar_step(&m, &x, &h, &c);
            for v in 0..m.vocab.len() {
                let mut z = m.out_bias.value[(0, v)];
                for j in 0..3 {
                    z += h[j] * m.out_weights.value[(j, v)];
                }
                assert!((logits[(t, v)] - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_arity_is_checked() {
        let cond = BfpCondition::new([1, 0, 1, 0, 1]).unwrap();
        let enc = model(5, 3, 1).encode_tokens(&toks(&["w01"]));
        assert!(matches!(
            model(5, 3, 1).generator_forward(&enc, None),
            Err(Error::ConditionArity { expected: 5, got: 0 })
        ));
        assert!(matches!(
            model(0, 3, 1).generator_forward(&enc, Some(&cond)),
            Err(Error::ConditionArity { expected: 0, got: 5 })
        ));
    }

    #[test]
    fn zeroed_condition_rows_make_conditions_irrelevant() {
        let mut m = model(5, 4, 8);
        let k = m.config.embed_dim;
        for r in k..k + 5 {
            m.gate_weights.value.row_mut(r).fill(0.0);
        }
        let enc = m.encode_tokens(&toks(&["w01", "w07", "w02"]));
        let reference = m.generator_forward(&enc, Some(&BfpCondition::new([0; 5]).unwrap())).unwrap();
        for c in BfpCondition::all() {
            assert_eq!(m.generator_forward(&enc, Some(&c)).unwrap(), reference);
        }
    }

    #[test]
    fn loss_values() {
        let m = model(0, 3, 1);
        let enc = m.encode_tokens(&toks(&["w01", "w02"]));
        let v = m.vocab.len();
        let uniform = Matrix::zeros(enc.ids.len() - 1, v);
        assert!((generator_loss(&uniform, &enc).unwrap() - (v as f64).ln()).abs() < 1e-12);

        let mut exact = Matrix::filled(enc.ids.len() - 1, v, -1000.0);
        for t in 0..exact.rows() {
            exact[(t, enc.ids[t + 1])] = 0.0;
        }
        assert!(generator_loss(&exact, &enc).unwrap().abs() < 1e-12);

        let logits = m.generator_forward(&enc, None).unwrap();
        let mut manual = 0.0;
        for t in 0..3 {
            let row = logits.row(t);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            manual -= (row[enc.ids[t + 1]].exp() / z).ln();
        }
        assert!((generator_loss(&logits, &enc).unwrap() - manual / 3.0).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_agrees_with_single_forward() {
        let mut m = model(5, 3, 6);
        let c1 = BfpCondition::new([1, 0, 0, 1, 1]).unwrap();
        let c2 = BfpCondition::new([0, 1, 1, 0, 0]).unwrap();
        let e1 = m.encode_tokens(&toks(&["w01", "w05", "w09"]));
        let e2 = m.encode_tokens(&toks(&["w11"]));
        let l1 = generator_loss(&m.generator_forward(&e1, Some(&c1)).unwrap(), &e1).unwrap();
        let l2 = generator_loss(&m.generator_forward(&e2, Some(&c2)).unwrap(), &e2).unwrap();
        let batch = m.batch_loss(&[(&e1, Some(&c1)), (&e2, Some(&c2))], false).unwrap();
        assert!((batch - (l1 + l2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = LstmConfig {
            embed_dim: 4,
            hidden_dim: 5,
            cond_dim: 5,
            max_len: 4,
            ..LstmConfig::default()
        };
        let mut m = LstmModel::new(cfg, vocab(16), &mut rng::seeded(21)).unwrap();
        // Move away from the initial point so no gate sits near a flat spot.
        let mut r = rng::seeded(5);
        for (_, p) in m.parameters_mut() {
            for v in p.value.data_mut() {
                *v = 2.0 * *v + 0.4 * (rng::uniform(&mut r) - 0.5);
            }
        }
        // max_len 4 gives three timesteps per text.
        let e1 = m.encode_tokens(&toks(&["w03", "w08"]));
        let e2 = m.encode_tokens(&toks(&["w12"]));
        let c1 = BfpCondition::new([1, 0, 1, 1, 0]).unwrap();
        let c2 = BfpCondition::new([0, 1, 0, 0, 1]).unwrap();
        let report = gradient_check(
            &mut m,
            |m| m.batch_loss(&[(&e1, Some(&c1)), (&e2, Some(&c2))], true),
            |m| m.clone().batch_loss(&[(&e1, Some(&c1)), (&e2, Some(&c2))], false),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn repetition_rules() {
        assert_eq!(repetition(&[5, 6, 6]), None);
        assert_eq!(repetition(&[5, 6, 6, 6]), Some(StopReason::RepeatedToken));
        assert_eq!(repetition(&[1, 2, 3, 4, 9, 1, 2, 3, 4]), Some(StopReason::RepeatedPhrase));
        assert_eq!(repetition(&[1, 2, 1, 2, 1, 2]), Some(StopReason::RepeatedPhrase));
        assert_eq!(repetition(&[1, 2, 3, 4, 5]), None);
    }

    fn forced(token: &str) -> LstmModel {
        let mut m = model(0, 3, 1);
        m.out_weights.value.fill(0.0);
        m.out_bias.value.fill(-50.0);
        let id = m.vocab.id(token);
        m.out_bias.value[(0, id)] = 50.0;
        m
    }

    #[test]
    fn forced_token_stops_after_two_copies() {
        let m = forced("w05");
        let g = generate(&m, None, &toks(&["w01"]), 1.0, 20, &mut rng::seeded(1)).unwrap();
        assert_eq!(g.tokens, toks(&["w01", "w05", "w05"]));
        assert_eq!(g.stop, StopReason::RepeatedToken);
    }

    #[test]
    fn greedy_is_deterministic_and_respects_max_len() {
        let m = model(5, 4, 3);
        let c = BfpCondition::new([1; 5]).unwrap();
        let pool = toks(&["w02"]);
        let a = generate(&m, Some(&c), &pool, 0.0, 6, &mut rng::seeded(1)).unwrap();
        let b = generate(&m, Some(&c), &pool, 0.0, 6, &mut rng::seeded(99)).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= 6);
        assert_eq!(a.tokens[0], "w02");
    }

    #[test]
    fn seed_pool_errors() {
        let m = model(0, 3, 1);
        let mut r = rng::seeded(1);
        assert!(matches!(generate(&m, None, &[], 1.0, 5, &mut r), Err(Error::SeedPool(_))));
        assert!(matches!(generate(&m, None, &toks(&["nope"]), 1.0, 5, &mut r), Err(Error::SeedPool(_))));
        assert!(matches!(generate(&m, None, &toks(&["<eos>"]), 1.0, 5, &mut r), Err(Error::SeedPool(_))));
    }
}
