//! Accuracy, corpus BLEU, rationale Token F1 and MultiRC F1a.
//!
//! BLEU follows the mteval-v14 "international" tokenization and the NIST
//! ("exp") smoothing of zero n-gram matches: each time a precision has a zero
//! numerator the smoothing multiplier doubles and the precision becomes
//! `1 / (multiplier * total)`.

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Explanation, Span};
use crate::parser::{align_spans, label_of, parse_prediction, CanonicalLabel, ParsedPrediction};

pub const MAX_NGRAM: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
    #[error("cannot score an empty list")]
    Empty,
    #[error("masks are built over different token streams")]
    TokenStreamMismatch,
    #[error("span [{}, {}) is not valid for segment `{}`", .0.start, .0.end, .0.segment)]
    InvalidSpan(Span),
    #[error("no prediction for example `{0}`")]
    MissingPrediction(String),
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Fraction of exact matches; `Invalid` never matches.
pub fn accuracy(preds: &[CanonicalLabel], golds: &[String]) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| matches!(p, CanonicalLabel::Valid(l) if l == *g))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

static NONDIGIT_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([^\d])(\p{P})").unwrap());
static PUNCT_NONDIGIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{P})([^\d])").unwrap());
static SYMBOL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{S})").unwrap());
static PUNCT_CHAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}$").unwrap());

/// International BLEU tokenization: punctuation is split off unless it sits
/// between digits, symbols are always split off.
pub fn intl_tokenize(text: &str) -> Vec<String> {
    let s = NONDIGIT_PUNCT.replace_all(text.trim_end(), "${1} ${2} ");
    let s = PUNCT_NONDIGIT.replace_all(&s, " ${1} ${2}");
    let s = SYMBOL.replace_all(&s, " ${1} ");
    s.split_whitespace().map(str::to_string).collect()
}

/// Corpus BLEU with its sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bleu {
    pub score: f64,
    pub correct: [usize; MAX_NGRAM],
    pub total: [usize; MAX_NGRAM],
    /// Percentages, after smoothing.
    pub precisions: [f64; MAX_NGRAM],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String]) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for n in 1..=MAX_NGRAM {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

// log with the reference scorer's floor for zero precisions
fn floored_ln(x: f64) -> f64 {
    if x == 0.0 {
        -9_999_999_999.0
    } else {
        x.ln()
    }
}

fn bleu_from_stats(correct: [usize; MAX_NGRAM], total: [usize; MAX_NGRAM], sys_len: usize, ref_len: usize) -> Bleu {
    let mut precisions = [0.0; MAX_NGRAM];
    let mut multiplier = 1.0;
    for n in 0..MAX_NGRAM {
        if total[n] == 0 {
            break;
        }
        if correct[n] == 0 {
            multiplier *= 2.0;
            precisions[n] = 100.0 / (multiplier * total[n] as f64);
        } else {
            precisions[n] = 100.0 * correct[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if sys_len < ref_len {
        if sys_len > 0 {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let log_sum: f64 = precisions.iter().map(|&p| floored_ln(p)).sum();
    Bleu {
        score: brevity_penalty * (log_sum / MAX_NGRAM as f64).exp(),
        correct,
        total,
        precisions,
        brevity_penalty,
        sys_len,
        ref_len,
    }
}

/// Single-reference corpus BLEU on a 0-100 scale. Statistics are summed in
/// input order, so the result does not depend on scheduling.
pub fn bleu(candidates: &[&str], references: &[&str]) -> Result<Bleu, MetricError> {
    bleu_with_case(candidates, references, true)
}

pub fn bleu_with_case(candidates: &[&str], references: &[&str], case_sensitive: bool) -> Result<Bleu, MetricError> {
    check_lengths(candidates.len(), references.len())?;
    let mut correct = [0; MAX_NGRAM];
    let mut total = [0; MAX_NGRAM];
    let (mut sys_len, mut ref_len) = (0, 0);
    for (cand, reference) in candidates.iter().zip(references) {
        let (cand, reference) = if case_sensitive {
            (intl_tokenize(cand), intl_tokenize(reference))
        } else {
            (
                intl_tokenize(&cand.to_lowercase()),
                intl_tokenize(&reference.to_lowercase()),
            )
        };
        sys_len += cand.len();
        ref_len += reference.len();
        let ref_counts = ngram_counts(&reference);
        for (gram, count) in ngram_counts(&cand) {
            let n = gram.len() - 1;
            correct[n] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            total[n] += count;
        }
    }
    Ok(bleu_from_stats(correct, total, sys_len, ref_len))
}

/// Splits text on whitespace and detaches each leading or trailing
/// punctuation character as its own token.
pub trait WordTokenizer {
    /// Character ranges of the tokens of `text`.
    fn token_ranges(&self, text: &str) -> Vec<(usize, usize)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTokenizer;

fn is_punct(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCT_CHAR.is_match(c.encode_utf8(&mut buf))
}

impl WordTokenizer for RuleTokenizer {
    fn token_ranges(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let end = i;
            let mut lo = start;
            while lo < end && is_punct(chars[lo]) {
                out.push((lo, lo + 1));
                lo += 1;
            }
            let mut hi = end;
            while hi > lo && is_punct(chars[hi - 1]) {
                hi -= 1;
            }
            if lo < hi {
                out.push((lo, hi));
            }
            out.extend((hi..end).map(|k| (k, k + 1)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub segment: String,
    pub start: usize,
    pub end: usize,
}

/// Per-token rationale mask over an example's segments (in task order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMask {
    pub tokens: Vec<Token>,
    pub mask: Vec<bool>,
}

impl TokenMask {
    pub fn marked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tokens of all segments of `e`, in task order.
pub fn tokenize_example(e: &Example, tokenizer: &impl WordTokenizer) -> Vec<Token> {
    let mut tokens = Vec::new();
    for name in e.task.segment_names() {
        let Some(text) = e.segment(name) else { continue };
        let chars: Vec<char> = text.chars().collect();
        for (start, end) in tokenizer.token_ranges(text) {
            tokens.push(Token {
                text: chars[start..end].iter().collect(),
                segment: name.to_string(),
                start,
                end,
            });
        }
    }
    tokens
}

/// A token is marked iff its character range intersects one of `spans`.
pub fn mask_from_spans(e: &Example, spans: &[Span], tokenizer: &impl WordTokenizer) -> Result<TokenMask, MetricError> {
    for span in spans {
        let valid = e
            .segment(&span.segment)
            .is_some_and(|t| span.start < span.end && span.end <= t.chars().count());
        if !valid {
            return Err(MetricError::InvalidSpan(span.clone()));
        }
    }
    let tokens = tokenize_example(e, tokenizer);
    let mask = tokens
        .iter()
        .map(|t| {
            spans
                .iter()
                .any(|s| s.segment == t.segment && s.start < t.end && t.start < s.end)
        })
        .collect();
    Ok(TokenMask { tokens, mask })
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    match (tp + fp, tp + fn_) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if tp == 0 => 0.0,
        // 2PR / (P + R), rearranged so that integer counts give a single
        // correctly rounded division
        _ => (2 * tp) as f64 / (2 * tp + fp + fn_) as f64,
    }
}

/// F1 over positionwise mask agreement. Two empty rationales agree perfectly.
pub fn token_f1(pred: &TokenMask, gold: &TokenMask) -> Result<f64, MetricError> {
    if pred.tokens != gold.tokens || pred.mask.len() != gold.mask.len() || pred.mask.len() != pred.tokens.len() {
        return Err(MetricError::TokenStreamMismatch);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.mask.iter().zip(&gold.mask) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Binary F1 with `true` as the positive class, over all answers.
pub fn f1a(preds: &[bool], golds: &[bool]) -> Result<f64, MetricError> {
    check_lengths(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub bleu: Option<f64>,
    pub token_f1: Option<f64>,
    pub f1a: Option<f64>,
    pub n_examples: usize,
    pub n_spurious: usize,
    pub case_sensitive: bool,
}

impl fmt::Display for MetricReport {
    /// Plain-text table; fractions are shown as percentages.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let bleu = self.bleu.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        writeln!(f, "{:>8} {:>8} {:>8} {:>8}", "Acc", "BLEU", "TF1", "F1a")?;
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8}",
            pct(Some(self.accuracy)),
            bleu,
            pct(self.token_f1),
            pct(self.f1a)
        )?;
        write!(
            f,
            "n={} spurious={} case_sensitive={}",
            self.n_examples, self.n_spurious, self.case_sensitive
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    pub case_sensitive: bool,
    /// Score each candidate against the best of its references instead of
    /// the first one.
    pub multi_reference_max: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            case_sensitive: true,
            multi_reference_max: false,
        }
    }
}

/// Scores raw decoder outputs (keyed by example id) against a gold corpus.
///
/// BLEU covers examples with abstractive gold explanations (predicted
/// explanations joined by a space). Token F1 is the mean over examples with
/// extractive gold explanations. F1a is reported for MultiRC; an invalid
/// label always counts as the wrong answer.
pub fn evaluate(
    examples: &[Example],
    outputs: &HashMap<String, String>,
    options: ScoreOptions,
) -> Result<MetricReport, MetricError> {
    if examples.is_empty() {
        return Err(MetricError::Empty);
    }
    let tokenizer = RuleTokenizer;
    let mut labels = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut candidates = Vec::new();
    let mut references = Vec::new();
    let mut f1s = Vec::new();
    let mut n_spurious = 0;
    let mut answer_preds = Vec::new();
    let mut answer_golds = Vec::new();
    let is_multirc = examples.iter().all(|e| e.task == crate::corpus::TaskKind::MultiRc);

    for e in examples {
        let raw = outputs
            .get(&e.id)
            .ok_or_else(|| MetricError::MissingPrediction(e.id.clone()))?;
        let parsed = parse_prediction(raw).unwrap_or(ParsedPrediction {
            label: String::new(),
            explanations: Vec::new(),
        });
        let label = if parsed.label.is_empty() {
            CanonicalLabel::Invalid
        } else {
            label_of(&parsed, &e.task, e.choices.as_deref())
        };
        if is_multirc {
            let gold = e.label == "True";
            answer_golds.push(gold);
            answer_preds.push(match &label {
                CanonicalLabel::Valid(l) => l == "True",
                CanonicalLabel::Invalid => !gold,
            });
        }
        labels.push(label);
        golds.push(e.label.clone());

        let abstractive: Vec<&str> = e
            .explanations
            .iter()
            .filter_map(|x| match x {
                Explanation::Abstractive(t) => Some(t.as_str()),
                Explanation::Extractive(_) => None,
            })
            .collect();
        if !abstractive.is_empty() {
            let candidate = parsed.explanations.join(" ");
            let reference = if options.multi_reference_max && abstractive.len() > 1 {
                let mut best = (f64::NEG_INFINITY, abstractive[0]);
                for r in &abstractive {
                    let s = bleu_with_case(&[&candidate], &[r], options.case_sensitive)?.score;
                    if s > best.0 {
                        best = (s, r);
                    }
                }
                best.1
            } else {
                abstractive[0]
            };
            candidates.push(candidate);
            references.push(reference.to_string());
        }

        let gold_spans: Vec<Span> = e.gold_spans().into_iter().cloned().collect();
        if !gold_spans.is_empty() {
            let aligned = align_spans(&parsed, e);
            n_spurious += aligned.spurious.len();
            let pred_mask = mask_from_spans(e, &aligned.matched, &tokenizer)?;
            let gold_mask = mask_from_spans(e, &gold_spans, &tokenizer)?;
            f1s.push(token_f1(&pred_mask, &gold_mask)?);
        }
    }

    let bleu = if candidates.is_empty() {
        None
    } else {
        let c: Vec<&str> = candidates.iter().map(String::as_str).collect();
        let r: Vec<&str> = references.iter().map(String::as_str).collect();
        Some(bleu_with_case(&c, &r, options.case_sensitive)?.score)
    };
    Ok(MetricReport {
        accuracy: accuracy(&labels, &golds)?,
        bleu,
        token_f1: (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64),
        f1a: if is_multirc {
            Some(f1a(&answer_preds, &answer_golds)?)
        } else {
            None
        },
        n_examples: examples.len(),
        n_spurious,
        case_sensitive: options.case_sensitive,
    })
}
