//! A small word-level encoder-decoder trained with the ordinary sequence
//! loss, used to check the text-to-text explanation recipe end to end.

mod checkpoint;
mod decode;
mod model;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::formatter::FormattedPair;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use decode::{beam_search, greedy, ConditionedModel, Hypothesis, StepModel};
pub use model::{log_softmax, softmax, DecoderState, Param, ParamSet, Tensor, ToyModel};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "</s>", "<unk>"];

#[derive(Debug, thiserror::Error)]
pub enum Seq2SeqError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("empty batch")]
    EmptyBatch,
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("target sequence does not end with EOS")]
    MissingEos,
    #[error("training diverged: non-finite loss or gradient")]
    Diverged,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word vocabulary. Ids 0, 1, 2 are PAD, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from tokens listed in id order; the first three must be the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, Seq2SeqError> {
        if tokens.len() < 3 || tokens[..3].iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Seq2SeqError::Checkpoint(
                "vocabulary must start with <pad> </s> <unk>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Seq2SeqError::Checkpoint(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace-split ids, without EOS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Joins tokens with single spaces, stopping at EOS and skipping PAD.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokens of inputs and targets with frequency at least `min_count`, ordered
/// by descending frequency, then lexicographically.
pub fn build_vocab(pairs: &[FormattedPair], min_count: usize) -> Result<Vocabulary, Seq2SeqError> {
    if pairs.is_empty() {
        return Err(Seq2SeqError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for w in p.input_text.split_whitespace().chain(p.target_text.split_whitespace()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count && !RESERVED.contains(w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(words.into_iter().map(|(w, _)| w.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Id sequences for one pair; the target ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
}

impl EncodedPair {
    /// Truncates input to `max_input` and target to `max_target` tokens
    /// (EOS included).
    pub fn from_pair(vocab: &Vocabulary, pair: &FormattedPair, max_input: usize, max_target: usize) -> Self {
        let mut input = vocab.encode(&pair.input_text);
        input.truncate(max_input);
        let mut target = vocab.encode(&pair.target_text);
        target.truncate(max_target.saturating_sub(1));
        target.push(EOS);
        EncodedPair { input, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub max_input_len: usize,
    pub max_target_len: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Rescale each step's gradient to at most this L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_d_model() -> usize {
    64
}

fn default_min_count() -> usize {
    1
}

fn default_init_scale() -> f64 {
    0.08
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 16,
            lr: 1.0,
            seed: 0,
            max_input_len: 64,
            max_target_len: 32,
            d_model: default_d_model(),
            min_count: default_min_count(),
            init_scale: default_init_scale(),
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let positive = [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("max_input_len", self.max_input_len),
            ("max_target_len", self.max_target_len),
            ("d_model", self.d_model),
            ("min_count", self.min_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Seq2SeqError::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Seq2SeqError::Config("lr must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Seq2SeqError::Config("clip_norm must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Seq2SeqError::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Loss after each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Builds a vocabulary from `pairs`, then runs `config.steps` steps of
/// minibatch gradient descent over shuffled epochs. `on_step` sees each
/// step index and its loss.
pub fn train(
    pairs: &[FormattedPair],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(ToyModel, TrainReport), Seq2SeqError> {
    config.validate()?;
    let vocab = build_vocab(pairs, config.min_count)?;
    let data: Vec<EncodedPair> = pairs
        .iter()
        .map(|p| EncodedPair::from_pair(&vocab, p, config.max_input_len, config.max_target_len))
        .filter(|p| !p.input.is_empty())
        .collect();
    if data.is_empty() {
        return Err(Seq2SeqError::EmptyCorpus);
    }
    let mut model = ToyModel::new(vocab, config.d_model, config.init_scale, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        while batch.len() < config.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let loss = model.train_step_clipped(&batch, config.lr, config.clip_norm)?;
        report.losses.push(loss);
        on_step(step, loss);
    }
    Ok((model, report))
}

impl ToyModel {
    /// Greedy decoding of `input`; EOS is not included in the result.
    pub fn greedy_decode(&self, input: &[u32], max_len: usize) -> Result<Vec<u32>, Seq2SeqError> {
        let scorer = self.scorer(input)?;
        Ok(greedy(&scorer, max_len))
    }

    pub fn beam_decode(&self, input: &[u32], k: usize, max_len: usize) -> Result<Vec<u32>, Seq2SeqError> {
        let scorer = self.scorer(input)?;
        Ok(beam_search(&scorer, k.max(1), max_len).tokens)
    }

    /// Decodes raw input text with greedy search (`beam <= 1`) or beam
    /// search.
    pub fn generate(&self, input_text: &str, beam: usize, max_len: usize) -> Result<String, Seq2SeqError> {
        let ids = self.vocab.encode(input_text);
        let out = if beam <= 1 {
            self.greedy_decode(&ids, max_len)?
        } else {
            self.beam_decode(&ids, beam, max_len)?
        };
        Ok(self.vocab.decode(&out))
    }
}
