//! Synthetic explainable sentiment task.
//!
//! Each review is a run of neutral filler words with exactly one trigger word
//! somewhere strictly inside it. The label is the trigger's polarity and the
//! explanation is the three-word window centred on the trigger, so the
//! correct explanation is unique.

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Explanation, Span, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationStyle {
    #[default]
    Abstractive,
    Extractive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_examples: usize,
    pub fillers: Vec<String>,
    /// Trigger word to sentiment label.
    pub triggers: IndexMap<String, String>,
    /// Review length range in words, inclusive.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub style: ExplanationStyle,
}

const FILLERS: [&str; 24] = [
    "movie",
    "plot",
    "scene",
    "actor",
    "story",
    "camera",
    "music",
    "ending",
    "script",
    "director",
    "cast",
    "film",
    "sound",
    "lights",
    "screen",
    "dialogue",
    "moment",
    "character",
    "studio",
    "ticket",
    "popcorn",
    "sequel",
    "premiere",
    "trailer",
];
const POSITIVE: [&str; 6] = [
    "superb",
    "brilliant",
    "wonderful",
    "delightful",
    "masterful",
    "charming",
];
const NEGATIVE: [&str; 6] = ["awful", "dreadful", "boring", "clumsy", "tedious", "horrible"];

impl SynthSpec {
    /// Built-in lexicon: 24 fillers, 6 positive and 6 negative triggers,
    /// reviews of 5 to 10 words.
    pub fn with_defaults(n_examples: usize, seed: u64) -> Self {
        let triggers = POSITIVE
            .iter()
            .map(|w| (w.to_string(), "positive".to_string()))
            .chain(NEGATIVE.iter().map(|w| (w.to_string(), "negative".to_string())))
            .collect();
        SynthSpec {
            n_examples,
            fillers: FILLERS.iter().map(|s| s.to_string()).collect(),
            triggers,
            min_len: 5,
            max_len: 10,
            seed,
            style: ExplanationStyle::Abstractive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("trigger lexicon is empty")]
    NoTriggers,
    #[error("filler vocabulary is empty")]
    NoFillers,
    #[error("`{0}` is both a filler and a trigger")]
    NotDisjoint(String),
    #[error("word {0:?} must be non-empty and contain no whitespace")]
    BadWord(String),
    #[error("trigger `{trigger}` occurs inside `{word}`, so its window would not be unique")]
    AmbiguousTrigger { trigger: String, word: String },
    #[error("trigger `{trigger}` has label `{label}`; expected positive or negative")]
    BadLabel { trigger: String, label: String },
    #[error("review length range {min}..={max} cannot hold a trigger with a word on each side")]
    ImpossibleLength { min: usize, max: usize },
}

pub fn validate_spec(spec: &SynthSpec) -> Result<(), SynthError> {
    if spec.triggers.is_empty() {
        return Err(SynthError::NoTriggers);
    }
    if spec.fillers.is_empty() {
        return Err(SynthError::NoFillers);
    }
    if spec.min_len < 3 || spec.min_len > spec.max_len {
        return Err(SynthError::ImpossibleLength {
            min: spec.min_len,
            max: spec.max_len,
        });
    }
    let all: Vec<&String> = spec.fillers.iter().chain(spec.triggers.keys()).collect();
    for word in &all {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(SynthError::BadWord(word.to_string()));
        }
    }
    for (trigger, label) in &spec.triggers {
        if label != "positive" && label != "negative" {
            return Err(SynthError::BadLabel {
                trigger: trigger.clone(),
                label: label.clone(),
            });
        }
        if spec.fillers.contains(trigger) {
            return Err(SynthError::NotDisjoint(trigger.clone()));
        }
        if let Some(word) = all.iter().find(|w| *w != &trigger && w.contains(trigger.as_str())) {
            return Err(SynthError::AmbiguousTrigger {
                trigger: trigger.clone(),
                word: word.to_string(),
            });
        }
    }
    Ok(())
}

/// Deterministic under `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Example>, SynthError> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let triggers: Vec<(&String, &String)> = spec.triggers.iter().collect();
    let width = spec.n_examples.saturating_sub(1).to_string().len();
    let mut out = Vec::with_capacity(spec.n_examples);
    for i in 0..spec.n_examples {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let position = rng.random_range(1..len - 1);
        let (trigger, label) = triggers[rng.random_range(0..triggers.len())];
        let words: Vec<&str> = (0..len)
            .map(|k| {
                if k == position {
                    trigger.as_str()
                } else {
                    spec.fillers.choose(&mut rng).expect("non-empty").as_str()
                }
            })
            .collect();
        let review = words.join(" ");
        let window = words[position - 1..=position + 1].join(" ");
        let start: usize = words[..position - 1].iter().map(|w| w.chars().count() + 1).sum();
        let explanation = match spec.style {
            ExplanationStyle::Abstractive => Explanation::Abstractive(window.clone()),
            ExplanationStyle::Extractive => {
                Explanation::Extractive(Span::new("review", start, start + window.chars().count()))
            }
        };
        let mut segments = IndexMap::new();
        segments.insert("review".to_string(), review);
        let example = Example::new(
            format!("synth-{i:0width$}"),
            TaskKind::Sentiment,
            segments,
            None,
            label.clone(),
            vec![explanation],
        )
        .expect("generated examples satisfy corpus invariants");
        out.push(example);
    }
    Ok(out)
}
