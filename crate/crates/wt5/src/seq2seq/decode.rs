//! Greedy and beam decoding over any autoregressive next-token model.

use std::cmp::Ordering;

use super::model::{DecoderState, Encoding, ToyModel};
use super::{Seq2SeqError, EOS, PAD};

/// A left-to-right model: given a state and the previous token, returns the
/// next state and log-probabilities over the vocabulary. Decoding starts from
/// [`StepModel::start`] with PAD as the previous token.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    fn step(&self, state: &Self::State, prev: u32) -> (Self::State, Vec<f64>);
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Appends the argmax token until EOS or `max_len` tokens.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Vec<u32> {
    let mut state = model.start();
    let mut prev = PAD;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, log_probs) = model.step(&state, prev);
        let tok = argmax(&log_probs) as u32;
        if tok == EOS {
            break;
        }
        out.push(tok);
        state = next;
        prev = tok;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Without EOS.
    pub tokens: Vec<u32>,
    /// Sum of log-probabilities, including EOS when the hypothesis finished.
    pub score: f64,
    pub finished: bool,
}

// Higher score first, then lexicographically smaller ids.
fn rank(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search of width `k`. Each step keeps the best `k - finished`
/// extensions of the live hypotheses; extensions ending in EOS are moved to
/// the finished set. After `max_len` tokens the surviving live hypotheses
/// are final too. Returns the highest-scoring final hypothesis, ties broken
/// by lexicographic token ids. With `k = 1` this is exactly [`greedy`].
pub fn beam_search<M: StepModel>(model: &M, k: usize, max_len: usize) -> Hypothesis {
    let k = k.max(1);
    let mut live: Vec<(Vec<u32>, f64, M::State)> = vec![(Vec::new(), 0.0, model.start())];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let slots = k - finished.len();
        if live.is_empty() || slots == 0 {
            break;
        }
        let mut candidates: Vec<(Vec<u32>, f64, usize, u32)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (h, (tokens, score, state)) in live.iter().enumerate() {
            let prev = tokens.last().copied().unwrap_or(PAD);
            let (next, log_probs) = model.step(state, prev);
            states.push(next);
            for (tok, lp) in log_probs.iter().enumerate() {
                let mut ext = tokens.clone();
                ext.push(tok as u32);
                candidates.push((ext, score + lp, h, tok as u32));
            }
        }
        candidates.sort_by(|a, b| rank(a.1, &a.0, b.1, &b.0));
        candidates.truncate(slots);
        let mut next_live = Vec::new();
        for (mut tokens, score, h, tok) in candidates {
            if tok == EOS {
                tokens.pop();
                finished.push(Hypothesis {
                    tokens,
                    score,
                    finished: true,
                });
            } else {
                next_live.push((tokens, score, states[h].clone()));
            }
        }
        live = next_live;
    }

    finished
        .into_iter()
        .chain(live.into_iter().map(|(tokens, score, _)| Hypothesis {
            tokens,
            score,
            finished: false,
        }))
        .min_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens))
        .expect("beam keeps at least one hypothesis")
}

/// A [`ToyModel`] conditioned on one encoded input.
pub struct ConditionedModel<'m> {
    model: &'m ToyModel,
    encoding: Encoding,
}

impl StepModel for ConditionedModel<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.model.initial_state(&self.encoding)
    }

    fn step(&self, state: &DecoderState, prev: u32) -> (DecoderState, Vec<f64>) {
        let (next, probs) = self.model.step(&self.encoding, state, prev);
        (next, probs.iter().map(|p| p.ln()).collect())
    }
}

impl ToyModel {
    /// Runs the encoder once; the result can be decoded step by step.
    pub fn scorer(&self, input: &[u32]) -> Result<ConditionedModel<'_>, Seq2SeqError> {
        Ok(ConditionedModel {
            model: self,
            encoding: self.encode(input)?,
        })
    }

    /// Output distributions along a forced token sequence, one row per
    /// position (the first row follows the start token).
    pub fn next_token_probs(&self, input: &[u32], forced: &[u32]) -> Result<Vec<Vec<f64>>, Seq2SeqError> {
        self.check_ids(forced)?;
        let enc = self.encode(input)?;
        let mut state = self.initial_state(&enc);
        let mut prev = PAD;
        let mut rows = Vec::with_capacity(forced.len() + 1);
        for &tok in forced.iter().chain(std::iter::once(&EOS)) {
            let (next, probs) = self.step(&enc, &state, prev);
            rows.push(probs);
            state = next;
            prev = tok;
        }
        Ok(rows)
    }
}
