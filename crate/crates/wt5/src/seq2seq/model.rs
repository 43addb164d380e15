//! Recurrent encoder-decoder with dot-product attention and hand-written
//! backpropagation.
//!
//! Encoder: bidirectional tanh RNN over word embeddings; the memory at each
//! position is `m_t = [f_t; g_t]` (forward and backward states, width `2d`).
//!
//! Decoder, for target position `i` with previous token `y_{i-1}` (PAD at
//! the start) and previous attentional vector `a_{i-1}` (zero at the start):
//!
//! ```text
//! s_0 = tanh(Bridge [f_T; g_1] + b)
//! s_i = tanh(W e(y_{i-1}) + U s_{i-1} + F a_{i-1} + b)
//! α_i = softmax_t(m_t · (A s_i)),  c_i = Σ_t α_it m_t
//! a_i = tanh(C [s_i; c_i] + b)
//! p(y_i | x, y_<i) = softmax(O a_i + b)
//! ```
//!
//! The loss is the mean negative log-likelihood over all target tokens of a
//! batch under teacher forcing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncodedPair, Seq2SeqError, Vocabulary, EOS, PAD};

/// Parameter tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Embedding,
    EncFwdW,
    EncFwdU,
    EncFwdB,
    EncBwdW,
    EncBwdU,
    EncBwdB,
    BridgeW,
    BridgeB,
    DecW,
    DecU,
    DecF,
    DecB,
    AttnW,
    CombW,
    CombB,
    OutW,
    OutB,
}

impl Param {
    pub const ALL: [Param; 18] = [
        Param::Embedding,
        Param::EncFwdW,
        Param::EncFwdU,
        Param::EncFwdB,
        Param::EncBwdW,
        Param::EncBwdU,
        Param::EncBwdB,
        Param::BridgeW,
        Param::BridgeB,
        Param::DecW,
        Param::DecU,
        Param::DecF,
        Param::DecB,
        Param::AttnW,
        Param::CombW,
        Param::CombB,
        Param::OutW,
        Param::OutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Embedding => "embedding",
            Param::EncFwdW => "encoder.forward.input",
            Param::EncFwdU => "encoder.forward.recurrent",
            Param::EncFwdB => "encoder.forward.bias",
            Param::EncBwdW => "encoder.backward.input",
            Param::EncBwdU => "encoder.backward.recurrent",
            Param::EncBwdB => "encoder.backward.bias",
            Param::BridgeW => "bridge.weight",
            Param::BridgeB => "bridge.bias",
            Param::DecW => "decoder.input",
            Param::DecU => "decoder.recurrent",
            Param::DecF => "decoder.feed",
            Param::DecB => "decoder.bias",
            Param::AttnW => "attention.weight",
            Param::CombW => "combine.weight",
            Param::CombB => "combine.bias",
            Param::OutW => "output.weight",
            Param::OutB => "output.bias",
        }
    }

    /// Shape as `[rows, cols]` (or `[len]` for biases).
    pub fn shape(self, vocab: usize, d: usize) -> Vec<usize> {
        match self {
            Param::Embedding => vec![vocab, d],
            Param::EncFwdW | Param::EncFwdU | Param::EncBwdW | Param::EncBwdU => vec![d, d],
            Param::DecW | Param::DecU | Param::DecF => vec![d, d],
            Param::EncFwdB | Param::EncBwdB | Param::BridgeB | Param::DecB | Param::CombB => vec![d],
            Param::BridgeW => vec![d, 2 * d],
            Param::AttnW => vec![2 * d, d],
            Param::CombW => vec![d, 3 * d],
            Param::OutW => vec![vocab, d],
            Param::OutB => vec![vocab],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All tensors of a model (or their gradients), indexed by [`Param`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        ParamSet {
            tensors: Param::ALL
                .iter()
                .map(|p| {
                    let shape = p.shape(vocab, d);
                    Tensor {
                        name: p.name().to_string(),
                        data: vec![0.0; shape.iter().product()],
                        shape,
                    }
                })
                .collect(),
        }
    }

    pub fn get(&self, p: Param) -> &[f64] {
        &self.tensors[p as usize].data
    }

    pub fn get_mut(&mut self, p: Param) -> &mut [f64] {
        &mut self.tensors[p as usize].data
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// L2 norm over all entries.
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// y = W x, with W stored row-major as [rows, cols]
fn matvec(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (row, out) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *out = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn matvec_add(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (row, out) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// dx += W^T dy
fn matvec_t_add(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (row, &g) in w.chunks_exact(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

// dW += dy ⊗ x
fn outer_add(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (row, &g) in dw.chunks_exact_mut(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, &a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub vocab: Vocabulary,
    pub d_model: usize,
    pub params: ParamSet,
}

/// Encoder output for one input sequence.
#[derive(Debug, Clone)]
pub(crate) struct Encoding {
    pub embeddings: Vec<Vec<f64>>,
    pub fwd: Vec<Vec<f64>>,
    pub bwd: Vec<Vec<f64>>,
    /// `[f_t; g_t]` per position.
    pub memory: Vec<Vec<f64>>,
    pub bridge_in: Vec<f64>,
}

/// Decoder recurrent state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub feed: Vec<f64>,
}

// Per-step activations kept for backprop.
struct StepCache {
    prev_token: u32,
    prev_hidden: Vec<f64>,
    prev_feed: Vec<f64>,
    hidden: Vec<f64>,
    query: Vec<f64>,
    attn: Vec<f64>,
    combined_in: Vec<f64>,
    feed: Vec<f64>,
    probs: Vec<f64>,
}

impl ToyModel {
    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn new(vocab: Vocabulary, d_model: usize, scale: f64, seed: u64) -> Self {
        let mut params = ParamSet::zeros(vocab.len(), d_model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut params.tensors {
            for v in &mut t.data {
                *v = rng.random_range(-scale..=scale);
            }
        }
        ToyModel { vocab, d_model, params }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn embedding(&self, id: u32) -> &[f64] {
        let d = self.d_model;
        &self.params.get(Param::Embedding)[id as usize * d..(id as usize + 1) * d]
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<(), Seq2SeqError> {
        let v = self.vocab_size();
        match ids.iter().find(|&&id| id as usize >= v) {
            Some(&id) => Err(Seq2SeqError::IdOutOfRange { id, vocab: v }),
            None => Ok(()),
        }
    }

    pub(crate) fn encode(&self, input: &[u32]) -> Result<Encoding, Seq2SeqError> {
        if input.is_empty() {
            return Err(Seq2SeqError::EmptyInput);
        }
        self.check_ids(input)?;
        let d = self.d_model;
        let p = &self.params;
        let embeddings: Vec<Vec<f64>> = input.iter().map(|&id| self.embedding(id).to_vec()).collect();
        let n = input.len();

        let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut prev = vec![0.0; d];
        for e in &embeddings {
            let mut h = p.get(Param::EncFwdB).to_vec();
            matvec_add(p.get(Param::EncFwdW), d, e, &mut h);
            matvec_add(p.get(Param::EncFwdU), d, &prev, &mut h);
            tanh_in_place(&mut h);
            prev = h.clone();
            fwd.push(h);
        }
        let mut bwd = vec![Vec::new(); n];
        let mut next = vec![0.0; d];
        for t in (0..n).rev() {
            let mut h = p.get(Param::EncBwdB).to_vec();
            matvec_add(p.get(Param::EncBwdW), d, &embeddings[t], &mut h);
            matvec_add(p.get(Param::EncBwdU), d, &next, &mut h);
            tanh_in_place(&mut h);
            next = h.clone();
            bwd[t] = h;
        }
        let memory = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, g)| [f.as_slice(), g.as_slice()].concat())
            .collect();
        let bridge_in = [fwd[n - 1].as_slice(), bwd[0].as_slice()].concat();
        Ok(Encoding {
            embeddings,
            fwd,
            bwd,
            memory,
            bridge_in,
        })
    }

    pub(crate) fn initial_state(&self, enc: &Encoding) -> DecoderState {
        let d = self.d_model;
        let mut hidden = self.params.get(Param::BridgeB).to_vec();
        matvec_add(self.params.get(Param::BridgeW), 2 * d, &enc.bridge_in, &mut hidden);
        tanh_in_place(&mut hidden);
        DecoderState {
            hidden,
            feed: vec![0.0; d],
        }
    }

    fn step_cached(&self, enc: &Encoding, state: &DecoderState, prev_token: u32) -> StepCache {
        let d = self.d_model;
        let p = &self.params;
        let mut hidden = p.get(Param::DecB).to_vec();
        matvec_add(p.get(Param::DecW), d, self.embedding(prev_token), &mut hidden);
        matvec_add(p.get(Param::DecU), d, &state.hidden, &mut hidden);
        matvec_add(p.get(Param::DecF), d, &state.feed, &mut hidden);
        tanh_in_place(&mut hidden);

        let mut query = vec![0.0; 2 * d];
        matvec(p.get(Param::AttnW), d, &hidden, &mut query);
        let scores: Vec<f64> = enc.memory.iter().map(|m| dot(m, &query)).collect();
        let attn = softmax(&scores);
        let mut context = vec![0.0; 2 * d];
        for (m, &a) in enc.memory.iter().zip(&attn) {
            for (c, &v) in context.iter_mut().zip(m) {
                *c += a * v;
            }
        }
        let combined_in = [hidden.as_slice(), context.as_slice()].concat();
        let mut feed = p.get(Param::CombB).to_vec();
        matvec_add(p.get(Param::CombW), 3 * d, &combined_in, &mut feed);
        tanh_in_place(&mut feed);

        let mut logits = p.get(Param::OutB).to_vec();
        matvec_add(p.get(Param::OutW), d, &feed, &mut logits);
        StepCache {
            prev_token,
            prev_hidden: state.hidden.clone(),
            prev_feed: state.feed.clone(),
            hidden,
            query,
            attn,
            combined_in,
            feed,
            probs: softmax(&logits),
        }
    }

    /// One decoder step: new state and output distribution.
    pub(crate) fn step(&self, enc: &Encoding, state: &DecoderState, prev_token: u32) -> (DecoderState, Vec<f64>) {
        let c = self.step_cached(enc, state, prev_token);
        (
            DecoderState {
                hidden: c.hidden,
                feed: c.feed,
            },
            c.probs,
        )
    }

    fn check_pair(&self, pair: &EncodedPair) -> Result<(), Seq2SeqError> {
        self.check_ids(&pair.input)?;
        self.check_ids(&pair.target)?;
        if pair.target.last() != Some(&EOS) {
            return Err(Seq2SeqError::MissingEos);
        }
        Ok(())
    }

    /// Mean token negative log-likelihood of `batch` under teacher forcing.
    pub fn loss(&self, batch: &[EncodedPair]) -> Result<f64, Seq2SeqError> {
        let (sum, tokens) = self.loss_sum(batch)?;
        Ok(sum / tokens as f64)
    }

    /// Summed negative log-likelihood and target token count.
    pub fn loss_sum(&self, batch: &[EncodedPair]) -> Result<(f64, usize), Seq2SeqError> {
        if batch.is_empty() {
            return Err(Seq2SeqError::EmptyBatch);
        }
        let mut total = 0.0;
        let mut tokens = 0;
        for pair in batch {
            self.check_pair(pair)?;
            let enc = self.encode(&pair.input)?;
            let mut state = self.initial_state(&enc);
            let mut prev = PAD;
            for &y in &pair.target {
                let (next, probs) = self.step(&enc, &state, prev);
                total -= probs[y as usize].ln();
                state = next;
                prev = y;
            }
            tokens += pair.target.len();
        }
        Ok((total, tokens))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[EncodedPair]) -> Result<(f64, ParamSet), Seq2SeqError> {
        if batch.is_empty() {
            return Err(Seq2SeqError::EmptyBatch);
        }
        for pair in batch {
            self.check_pair(pair)?;
        }
        let n_tokens: usize = batch.iter().map(|p| p.target.len()).sum();
        let scale = 1.0 / n_tokens as f64;
        let mut grad = ParamSet::zeros(self.vocab_size(), self.d_model);
        let mut total = 0.0;
        for pair in batch {
            total += self.backprop_pair(pair, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }

    fn backprop_pair(&self, pair: &EncodedPair, scale: f64, grad: &mut ParamSet) -> Result<f64, Seq2SeqError> {
        let d = self.d_model;
        let p = &self.params;
        let enc = self.encode(&pair.input)?;
        let s0 = self.initial_state(&enc);

        let mut caches = Vec::with_capacity(pair.target.len());
        let mut state = s0.clone();
        let mut prev = PAD;
        let mut nll = 0.0;
        for &y in &pair.target {
            let c = self.step_cached(&enc, &state, prev);
            nll -= c.probs[y as usize].ln();
            state = DecoderState {
                hidden: c.hidden.clone(),
                feed: c.feed.clone(),
            };
            caches.push(c);
            prev = y;
        }

        let n = enc.memory.len();
        let mut d_memory = vec![vec![0.0; 2 * d]; n];
        let mut d_hidden_next = vec![0.0; d];
        let mut d_feed_next = vec![0.0; d];

        for (c, &y) in caches.iter().zip(&pair.target).rev() {
            // output layer
            let mut d_logits: Vec<f64> = c.probs.iter().map(|&q| q * scale).collect();
            d_logits[y as usize] -= scale;
            outer_add(grad.get_mut(Param::OutW), d, &d_logits, &c.feed);
            add_assign(grad.get_mut(Param::OutB), &d_logits);
            let mut d_feed = d_feed_next.clone();
            matvec_t_add(p.get(Param::OutW), d, &d_logits, &mut d_feed);

            // a = tanh(C [s; c] + b)
            let d_pre: Vec<f64> = d_feed.iter().zip(&c.feed).map(|(g, a)| g * (1.0 - a * a)).collect();
            outer_add(grad.get_mut(Param::CombW), 3 * d, &d_pre, &c.combined_in);
            add_assign(grad.get_mut(Param::CombB), &d_pre);
            let mut d_combined = vec![0.0; 3 * d];
            matvec_t_add(p.get(Param::CombW), 3 * d, &d_pre, &mut d_combined);
            let (d_hidden_out, d_context) = d_combined.split_at(d);

            // attention
            let d_alpha: Vec<f64> = enc.memory.iter().map(|m| dot(m, d_context)).collect();
            let weighted: f64 = c.attn.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
            let mut d_query = vec![0.0; 2 * d];
            for t in 0..n {
                let a = c.attn[t];
                let d_score = a * (d_alpha[t] - weighted);
                for k in 0..2 * d {
                    d_memory[t][k] += a * d_context[k] + d_score * c.query[k];
                    d_query[k] += d_score * enc.memory[t][k];
                }
            }
            let mut d_hidden = d_hidden_next.clone();
            add_assign(&mut d_hidden, d_hidden_out);
            outer_add(grad.get_mut(Param::AttnW), d, &d_query, &c.hidden);
            matvec_t_add(p.get(Param::AttnW), d, &d_query, &mut d_hidden);

            // s = tanh(W e + U s_prev + F a_prev + b)
            let d_z: Vec<f64> = d_hidden.iter().zip(&c.hidden).map(|(g, s)| g * (1.0 - s * s)).collect();
            let emb = self.embedding(c.prev_token);
            outer_add(grad.get_mut(Param::DecW), d, &d_z, emb);
            let row = c.prev_token as usize * d;
            matvec_t_add(
                p.get(Param::DecW),
                d,
                &d_z,
                &mut grad.get_mut(Param::Embedding)[row..row + d],
            );
            outer_add(grad.get_mut(Param::DecU), d, &d_z, &c.prev_hidden);
            outer_add(grad.get_mut(Param::DecF), d, &d_z, &c.prev_feed);
            add_assign(grad.get_mut(Param::DecB), &d_z);
            d_hidden_next = vec![0.0; d];
            matvec_t_add(p.get(Param::DecU), d, &d_z, &mut d_hidden_next);
            d_feed_next = vec![0.0; d];
            matvec_t_add(p.get(Param::DecF), d, &d_z, &mut d_feed_next);
        }

        // bridge: s_0 = tanh(B [f_T; g_1] + b); the initial feed is constant
        let d_pre: Vec<f64> = d_hidden_next
            .iter()
            .zip(&s0.hidden)
            .map(|(g, s)| g * (1.0 - s * s))
            .collect();
        outer_add(grad.get_mut(Param::BridgeW), 2 * d, &d_pre, &enc.bridge_in);
        add_assign(grad.get_mut(Param::BridgeB), &d_pre);
        let mut d_bridge_in = vec![0.0; 2 * d];
        matvec_t_add(p.get(Param::BridgeW), 2 * d, &d_pre, &mut d_bridge_in);

        let mut d_fwd: Vec<Vec<f64>> = d_memory.iter().map(|m| m[..d].to_vec()).collect();
        let mut d_bwd: Vec<Vec<f64>> = d_memory.iter().map(|m| m[d..].to_vec()).collect();
        add_assign(&mut d_fwd[n - 1], &d_bridge_in[..d]);
        add_assign(&mut d_bwd[0], &d_bridge_in[d..]);

        let input = &pair.input;
        let mut carry = vec![0.0; d];
        for t in (0..n).rev() {
            let mut g = d_fwd[t].clone();
            add_assign(&mut g, &carry);
            let d_pre: Vec<f64> = g.iter().zip(&enc.fwd[t]).map(|(g, h)| g * (1.0 - h * h)).collect();
            outer_add(grad.get_mut(Param::EncFwdW), d, &d_pre, &enc.embeddings[t]);
            let row = input[t] as usize * d;
            matvec_t_add(
                p.get(Param::EncFwdW),
                d,
                &d_pre,
                &mut grad.get_mut(Param::Embedding)[row..row + d],
            );
            if t > 0 {
                outer_add(grad.get_mut(Param::EncFwdU), d, &d_pre, &enc.fwd[t - 1]);
            }
            add_assign(grad.get_mut(Param::EncFwdB), &d_pre);
            carry = vec![0.0; d];
            matvec_t_add(p.get(Param::EncFwdU), d, &d_pre, &mut carry);
        }
        let mut carry = vec![0.0; d];
        for t in 0..n {
            let mut g = d_bwd[t].clone();
            add_assign(&mut g, &carry);
            let d_pre: Vec<f64> = g.iter().zip(&enc.bwd[t]).map(|(g, h)| g * (1.0 - h * h)).collect();
            outer_add(grad.get_mut(Param::EncBwdW), d, &d_pre, &enc.embeddings[t]);
            let row = input[t] as usize * d;
            matvec_t_add(
                p.get(Param::EncBwdW),
                d,
                &d_pre,
                &mut grad.get_mut(Param::Embedding)[row..row + d],
            );
            if t + 1 < n {
                outer_add(grad.get_mut(Param::EncBwdU), d, &d_pre, &enc.bwd[t + 1]);
            }
            add_assign(grad.get_mut(Param::EncBwdB), &d_pre);
            carry = vec![0.0; d];
            matvec_t_add(p.get(Param::EncBwdU), d, &d_pre, &mut carry);
        }
        Ok(nll)
    }

    /// One plain gradient-descent step; returns the loss before the update.
    pub fn train_step(&mut self, batch: &[EncodedPair], lr: f64) -> Result<f64, Seq2SeqError> {
        self.train_step_clipped(batch, lr, None)
    }

    /// As [`ToyModel::train_step`], scaling the gradient down to L2 norm
    /// `clip` when it is larger.
    pub fn train_step_clipped(
        &mut self,
        batch: &[EncodedPair],
        lr: f64,
        clip: Option<f64>,
    ) -> Result<f64, Seq2SeqError> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Seq2SeqError::Diverged);
        }
        let norm = grad.norm();
        let lr = match clip {
            Some(c) if norm > c => lr * c / norm,
            _ => lr,
        };
        if lr != 0.0 {
            for (param, g) in self.params.tensors.iter_mut().zip(&grad.tensors) {
                for (w, dw) in param.data.iter_mut().zip(&g.data) {
                    *w -= lr * dw;
                }
            }
        }
        if !self.params.is_finite() {
            return Err(Seq2SeqError::Diverged);
        }
        Ok(loss)
    }
}
