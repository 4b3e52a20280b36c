//! Convolutional trait classifier.
//!
//! Token embeddings are convolved with `F` filters spanning `m` consecutive
//! positions, passed through ReLU, max-pooled over time, and fed to five
//! independent sigmoid heads, one per trait.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numeric::{
    activate, activation_backward, affine, affine_backward_accumulate, clip_model_grads, max_over_time,
    max_over_time_backward, xavier_init, Activation, Adam, HasParameters, Matrix, Parameter, Pooled,
};
use crate::rng::{self, RESERVED_STREAM_BASE};
use crate::text::{build_vocab, encode, Document, EncodedText, TokenizeMode, Vocabulary, PAD};
use crate::traits::{Trait, TraitMap};

pub const CHECKPOINT_KIND: &str = "cnn";

const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub embed_dim: usize,
    pub window: usize,
    pub num_filters: usize,
    /// Filled in from the vocabulary when training starts.
    pub vocab_size: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub min_count: usize,
    pub max_vocab: usize,
    pub tokenize: TokenizeMode,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            embed_dim: 32,
            window: 3,
            num_filters: 64,
            vocab_size: 0,
            max_len: 50,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            min_count: 2,
            max_vocab: 20_000,
            tokenize: TokenizeMode::Whitespace,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.embed_dim == 0 || self.num_filters == 0 {
            return Err(Error::Validation("window, embed_dim and num_filters must be positive".into()));
        }
        if self.max_len < self.window + 2 {
            return Err(Error::Validation(format!(
                "max_len {} must be at least window + 2 = {}",
                self.max_len,
                self.window + 2
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub vocab: Vocabulary,
    pub embedding: Parameter,
    /// `F x (m·k)`; row `f` is filter `f` over a flattened window.
    pub conv_filters: Parameter,
    pub conv_bias: Parameter,
    pub head_weights: [Parameter; 5],
    pub head_biases: [Parameter; 5],
}

impl HasParameters for CnnModel {
    fn parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("conv.weight".to_string(), &self.conv_filters),
            ("conv.bias".to_string(), &self.conv_bias),
        ];
        for t in Trait::ALL {
            out.push((format!("head.{t}.weight"), &self.head_weights[t.index()]));
            out.push((format!("head.{t}.bias"), &self.head_biases[t.index()]));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out = vec![
            ("embedding".to_string(), &mut self.embedding),
            ("conv.weight".to_string(), &mut self.conv_filters),
            ("conv.bias".to_string(), &mut self.conv_bias),
        ];
        for (t, (w, b)) in Trait::ALL
            .into_iter()
            .zip(self.head_weights.iter_mut().zip(self.head_biases.iter_mut()))
        {
            out.push((format!("head.{t}.weight"), w));
            out.push((format!("head.{t}.bias"), b));
        }
        out
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardCache {
    window_ids: Vec<Vec<usize>>,
    windows: Matrix,
    filters_t: Matrix,
    pre: Matrix,
    act: Matrix,
    pooled: Pooled,
    logits: [Matrix; 5],
    probs: [Matrix; 5],
}

impl ForwardCache {
    fn probabilities(&self) -> [f64; 5] {
        std::array::from_fn(|d| self.probs[d][(0, 0)])
    }
}

impl CnnModel {
    pub fn new(mut config: CnnConfig, vocab: Vocabulary, rng: &mut rng::Rng) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let (k, m, f) = (config.embed_dim, config.window, config.num_filters);
        let embedding = Parameter::new(xavier_init(vocab.len(), k, rng)?);
        let conv_filters = Parameter::new(xavier_init(f, m * k, rng)?);
        let conv_bias = Parameter::new(Matrix::zeros(1, f));
        let mut head_weights = Vec::with_capacity(5);
        for _ in 0..5 {
            head_weights.push(Parameter::new(xavier_init(f, 1, rng)?));
        }
        Ok(CnnModel {
            config,
            vocab,
            embedding,
            conv_filters,
            conv_bias,
            head_weights: head_weights.try_into().expect("five heads"),
            head_biases: std::array::from_fn(|_| Parameter::new(Matrix::zeros(1, 1))),
        })
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> EncodedText {
        encode(tokens, &self.vocab, self.config.max_len)
    }

    /// Windows over the valid prefix. With `allow_short`, inputs with fewer
    /// than `m` valid positions become one window right-padded with PAD.
    fn window_ids(&self, encoded: &EncodedText, allow_short: bool) -> Result<Vec<Vec<usize>>> {
        let m = self.config.window;
        let valid = encoded.mask.iter().take_while(|&&b| b != 0).count();
        if valid >= m {
            Ok((0..=valid - m).map(|p| encoded.ids[p..p + m].to_vec()).collect())
        } else if allow_short {
            let mut w = encoded.ids[..valid].to_vec();
            w.resize(m, PAD);
            Ok(vec![w])
        } else {
            Err(Error::ShortInput { valid, window: m })
        }
    }

    fn forward_cached(&self, encoded: &EncodedText, allow_short: bool) -> Result<ForwardCache> {
        let k = self.config.embed_dim;
        let window_ids = self.window_ids(encoded, allow_short)?;
        let m = self.config.window;
        let mut windows = Matrix::zeros(window_ids.len(), m * k);
        for (p, ids) in window_ids.iter().enumerate() {
            let row = windows.row_mut(p);
            for (s, &id) in ids.iter().enumerate() {
                if id >= self.vocab.len() {
                    return Err(Error::InvalidId {
                        id,
                        size: self.vocab.len(),
                    });
                }
                row[s * k..(s + 1) * k].copy_from_slice(self.embedding.value.row(id));
            }
        }
        let filters_t = self.conv_filters.value.transpose();
        let pre = affine(&windows, &filters_t, &self.conv_bias.value)?;
        let act = activate(Activation::Relu, &pre)?;
        let pooled = max_over_time(&act)?;
        let mut logits = Vec::with_capacity(5);
        let mut probs = Vec::with_capacity(5);
        for d in 0..5 {
            let z = affine(&pooled.values, &self.head_weights[d].value, &self.head_biases[d].value)?;
            probs.push(activate(Activation::Sigmoid, &z)?);
            logits.push(z);
        }
        Ok(ForwardCache {
            window_ids,
            windows,
            filters_t,
            pre,
            act,
            pooled,
            logits: logits.try_into().expect("five logits"),
            probs: probs.try_into().expect("five probs"),
        })
    }

    /// Trait probabilities for an encoded text. Inputs with fewer valid
    /// positions than the window width are rejected.
    pub fn classifier_forward(&self, encoded: &EncodedText) -> Result<[f64; 5]> {
        Ok(self.forward_cached(encoded, false)?.probabilities())
    }

    /// Like [`classifier_forward`](Self::classifier_forward) but short inputs
    /// are treated as a single PAD-filled window.
    pub fn forward_lenient(&self, encoded: &EncodedText) -> Result<[f64; 5]> {
        Ok(self.forward_cached(encoded, true)?.probabilities())
    }

    pub fn predict_proba(&self, tokens: &[String]) -> Result<[f64; 5]> {
        self.forward_lenient(&self.encode_tokens(tokens))
    }

    /// Forward plus backward for one example. Gradients are accumulated into
    /// the parameters; the loss is returned.
    pub fn accumulate_gradients(&mut self, encoded: &EncodedText, labels: &TraitMap<u8>) -> Result<f64> {
        let cache = self.forward_cached(encoded, true)?;
        let probs = cache.probabilities();
        let loss = classifier_loss(&probs, labels);
        let dprobs = classifier_loss_grad(&probs, labels);

        let f = self.config.num_filters;
        let mut dpooled = Matrix::zeros(1, f);
        for d in 0..5 {
            let dp = Matrix::row_vector(&[dprobs[d]]);
            let dz = activation_backward(Activation::Sigmoid, &cache.logits[d], &cache.probs[d], &dp)?;
            let head_w = &mut self.head_weights[d];
            let head_b = &mut self.head_biases[d];
            let dx = affine_backward_accumulate(&cache.pooled.values, &head_w.value, &dz, &mut head_w.grad, &mut head_b.grad)?;
            dpooled.add_assign(&dx)?;
        }

        let dact = max_over_time_backward(&cache.pooled.argmax, &dpooled, cache.act.rows())?;
        let dpre = activation_backward(Activation::Relu, &cache.pre, &cache.act, &dact)?;
        let mut dfilters_t = Matrix::zeros(cache.filters_t.rows(), cache.filters_t.cols());
        let dwindows = affine_backward_accumulate(
            &cache.windows,
            &cache.filters_t,
            &dpre,
            &mut dfilters_t,
            &mut self.conv_bias.grad,
        )?;
        self.conv_filters.grad.add_assign(&dfilters_t.transpose())?;

        let k = self.config.embed_dim;
        for (p, ids) in cache.window_ids.iter().enumerate() {
            let g = dwindows.row(p);
            for (s, &id) in ids.iter().enumerate() {
                for (e, &gi) in self.embedding.grad.row_mut(id).iter_mut().zip(&g[s * k..(s + 1) * k]) {
                    *e += gi;
                }
            }
        }
        Ok(loss)
    }

    pub fn loss(&self, encoded: &EncodedText, labels: &TraitMap<u8>) -> Result<f64> {
        Ok(classifier_loss(&self.forward_lenient(encoded)?, labels))
    }

    pub fn checkpoint(&self) -> Checkpoint<CnnConfig> {
        Checkpoint::capture(
            CHECKPOINT_KIND,
            self.config.clone(),
            self.vocab.stored_tokens().to_vec(),
            self,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint<CnnConfig>) -> Result<Self> {
        let vocab = Vocabulary::from_stored(ck.vocab.clone())?;
        if ck.config.vocab_size != vocab.len() {
            return Err(Error::Validation(format!(
                "config vocab_size {} but checkpoint stores {} tokens",
                ck.config.vocab_size,
                vocab.len()
            )));
        }
        let mut model = CnnModel::new(ck.config.clone(), vocab, &mut rng::seeded(0))?;
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

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over the five traits.
pub fn classifier_loss(probs: &[f64; 5], labels: &TraitMap<u8>) -> f64 {
    probs
        .iter()
        .zip(labels.0)
        .map(|(&p, y)| {
            let p = clamp_prob(p);
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / 5.0
}

fn classifier_loss_grad(probs: &[f64; 5], labels: &TraitMap<u8>) -> [f64; 5] {
    std::array::from_fn(|d| {
        let p = probs[d];
        if clamp_prob(p) != p {
            return 0.0;
        }
        let y = f64::from(labels.0[d]);
        (-y / p + (1.0 - y) / (1.0 - p)) / 5.0
    })
}

/// `1` where the probability is strictly above the threshold.
pub fn predict_labels(probs: &[f64; 5], threshold: f64) -> TraitMap<u8> {
    TraitMap(probs.map(|p| u8::from(p > threshold)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: TraitMap<f64>,
    pub mean_val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainingReport {
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept; 0 means the initial model.
    pub best_epoch: usize,
    pub best_val_accuracy: TraitMap<f64>,
}

fn labels_of(docs: &[Document], idx: &[usize]) -> Result<Vec<TraitMap<u8>>> {
    idx.iter()
        .map(|&i| docs[i].labels.ok_or(Error::LabelMissing(i)))
        .collect()
}

pub fn validation_accuracy(model: &CnnModel, encoded: &[EncodedText], labels: &[TraitMap<u8>]) -> Result<TraitMap<f64>> {
    let preds: Vec<TraitMap<u8>> = encoded
        .iter()
        .map(|e| model.forward_lenient(e).map(|p| predict_labels(&p, 0.5)))
        .collect::<Result<_>>()?;
    Ok(TraitMap::from_fn(|t| {
        let hits = preds.iter().zip(labels).filter(|(p, y)| p[t] == y[t]).count();
        hits as f64 / labels.len().max(1) as f64
    }))
}

fn mean5(m: &TraitMap<f64>) -> f64 {
    m.0.iter().sum::<f64>() / 5.0
}

/// Shuffles, splits 9:1, trains with minibatch Adam and returns the
/// parameters of the epoch with the best mean validation accuracy.
pub fn train_classifier(docs: &[Document], config: &CnnConfig, seed: u64) -> Result<(CnnModel, ClassifierTrainingReport)> {
    config.validate()?;
    if docs.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "classifier training needs at least 10 documents, got {}",
            docs.len()
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    rng::shuffle(&mut rng::stream(seed, RESERVED_STREAM_BASE), &mut order);
    let val_size = ((docs.len() as f64) * 0.1).round().max(1.0) as usize;
    let (train_idx, val_idx) = order.split_at(docs.len() - val_size);
    let train_labels = labels_of(docs, train_idx)?;
    let val_labels = labels_of(docs, val_idx)?;

    let vocab = build_vocab(
        train_idx.iter().map(|&i| docs[i].tokens.as_slice()),
        config.min_count,
        config.max_vocab,
    );
    let mut model = CnnModel::new(config.clone(), vocab, &mut rng::stream(seed, RESERVED_STREAM_BASE + 1))?;
    let train_enc: Vec<EncodedText> = train_idx.iter().map(|&i| model.encode_tokens(&docs[i].tokens)).collect();
    let val_enc: Vec<EncodedText> = val_idx.iter().map(|&i| model.encode_tokens(&docs[i].tokens)).collect();

    let adam = Adam::new(config.learning_rate);
    let mut best = model.clone();
    let mut best_acc = validation_accuracy(&model, &val_enc, &val_labels)?;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(config.epochs);

    let mut batch_order: Vec<usize> = (0..train_enc.len()).collect();
    for epoch in 1..=config.epochs {
        rng::shuffle(&mut rng::stream(seed, RESERVED_STREAM_BASE + 16 + epoch as u64), &mut batch_order);
        let mut total_loss = 0.0;
        for batch in batch_order.chunks(config.batch_size) {
            model.zero_grad();
            for &i in batch {
                total_loss += model.accumulate_gradients(&train_enc[i], &train_labels[i])?;
            }
            let inv = 1.0 / batch.len() as f64;
            for (_, p) in model.parameters_mut() {
                p.grad.scale(inv);
            }
            clip_model_grads(&mut model, config.clip_norm);
            adam.step_all(&mut model)?;
        }
        let acc = validation_accuracy(&model, &val_enc, &val_labels)?;
        let mean = mean5(&acc);
        if epoch == 1 || mean > mean5(&best_acc) {
            best = model.clone();
            best_acc = acc;
            best_epoch = epoch;
        }
        epochs.push(EpochMetrics {
            epoch,
            train_loss: total_loss / train_enc.len() as f64,
            val_accuracy: acc,
            mean_val_accuracy: mean,
        });
    }

    Ok((
        best,
        ClassifierTrainingReport {
            train_size: train_enc.len(),
            val_size: val_enc.len(),
            epochs,
            best_epoch,
            best_val_accuracy: best_acc,
        },
    ))
}

/// Fills every document's labels with the classifier's predictions,
/// preserving order.
pub fn label_corpus(docs: &[Document], model: &CnnModel) -> Result<Vec<Document>> {
    docs.par_iter()
        .map(|d| {
            let probs = model.predict_proba(&d.tokens)?;
            let mut out = d.clone();
            out.labels = Some(predict_labels(&probs, 0.5));
            Ok(out)
        })
        .collect()
}

/// Fraction of in-vocabulary tokens that map to UNK across a corpus.
pub fn unk_rate(docs: &[Document], vocab: &Vocabulary) -> f64 {
    let (mut unk, mut total) = (0usize, 0usize);
    for d in docs {
        for t in &d.tokens {
            total += 1;
            if !vocab.contains(t) {
                unk += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        unk as f64 / total as f64
    }
}
