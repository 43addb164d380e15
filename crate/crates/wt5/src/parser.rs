//! Recovering labels and explanations from decoded text.

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Span, TaskKind};
use crate::SEPARATOR;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub label: String,
    pub explanations: Vec<String>,
}

/// Explanations of a prediction matched back onto the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPrediction {
    pub label: String,
    /// Ordered by segment position, then start offset.
    pub matched: Vec<Span>,
    /// Generated explanations with no non-overlapping occurrence in the input.
    pub spurious: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("prediction is empty")]
    Empty,
    #[error("prediction has an empty label")]
    EmptyLabel,
    #[error("explanation {0} is empty")]
    EmptyExplanation(usize),
}

/// Splits raw output on `" explanation: "`. The first piece (trimmed) is the
/// label; the rest are explanations, in order.
pub fn parse_prediction(raw: &str) -> Result<ParsedPrediction, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut pieces = raw.split(SEPARATOR);
    let label = pieces.next().unwrap_or_default().trim().to_string();
    if label.is_empty() {
        return Err(ParseError::EmptyLabel);
    }
    let explanations = pieces
        .enumerate()
        .map(|(i, piece)| {
            if piece.is_empty() {
                Err(ParseError::EmptyExplanation(i))
            } else {
                Ok(piece.to_string())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedPrediction { label, explanations })
}

/// Matches every explanation to its leftmost occurrence in the example's
/// segments (in task order) that does not overlap an earlier match. Matching
/// is case- and whitespace-exact.
pub fn align_spans(pred: &ParsedPrediction, e: &Example) -> AlignedPrediction {
    let mut matched: Vec<Span> = Vec::new();
    let mut spurious = Vec::new();
    let names = e.task.segment_names();

    'explanations: for needle in &pred.explanations {
        if needle.is_empty() {
            spurious.push(needle.clone());
            continue;
        }
        let needle_chars = needle.chars().count();
        for name in &names {
            let Some(text) = e.segment(name) else { continue };
            let mut from = 0;
            let mut chars_before = 0;
            while let Some(rel) = text[from..].find(needle.as_str()) {
                let byte = from + rel;
                chars_before += text[from..byte].chars().count();
                let candidate = Span::new(*name, chars_before, chars_before + needle_chars);
                if !matched.iter().any(|m| m.overlaps(&candidate)) {
                    matched.push(candidate);
                    continue 'explanations;
                }
                // retry one character later so overlapping occurrences are seen
                from = byte + text[byte..].chars().next().map_or(1, char::len_utf8);
                chars_before += 1;
            }
        }
        spurious.push(needle.clone());
    }

    matched.sort_by_key(|s| (e.task.segment_index(&s.segment).unwrap_or(usize::MAX), s.start));
    AlignedPrediction {
        label: pred.label.clone(),
        matched,
        spurious,
    }
}

/// Canonical label of a prediction, or `Invalid` when it is not an allowed
/// label. Matching is exact after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalLabel {
    Valid(String),
    Invalid,
}

impl CanonicalLabel {
    pub fn as_str(&self) -> &str {
        match self {
            CanonicalLabel::Valid(s) => s,
            CanonicalLabel::Invalid => "invalid",
        }
    }
}

pub fn label_of(pred: &ParsedPrediction, task: &TaskKind, choices: Option<&[String]>) -> CanonicalLabel {
    let label = pred.label.trim();
    let allowed = match (task.label_set(), choices) {
        (Some(set), _) => set.contains(&label),
        (None, Some(choices)) => choices.iter().any(|c| c == label),
        (None, None) => !task.requires_choices() && !label.is_empty(),
    };
    if allowed {
        CanonicalLabel::Valid(label.to_string())
    } else {
        CanonicalLabel::Invalid
    }
}
