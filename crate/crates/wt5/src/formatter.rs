//! Serialization of examples into text-to-text pairs.
//!
//! Inputs are `[explain] <task prefix> <segments> [choice: <c> ...]`, joined
//! by single spaces. Targets are the label, followed by
//! ` explanation: <text>` for every explanation when one was requested.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, TaskKind};
use crate::{EXPLAIN_PREFIX, SEPARATOR};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FormattedPair {
    pub input_text: String,
    pub target_text: String,
    pub wants_explanation: bool,
}

impl FormattedPair {
    pub fn new(input_text: impl Into<String>, target_text: impl Into<String>) -> Self {
        let (input_text, target_text) = (input_text.into(), target_text.into());
        let wants_explanation = input_text.starts_with(EXPLAIN_PREFIX);
        FormattedPair {
            input_text,
            target_text,
            wants_explanation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("example `{0}`: explanation requested but the example has none")]
    MissingExplanation(String),
    #[error("example `{0}`: an extractive span does not fit its segment")]
    InvalidSpan(String),
    #[error("policy has {got} entries for {expected} examples")]
    PolicyLength { expected: usize, got: usize },
}

fn input_parts(e: &Example) -> Vec<String> {
    let mut parts = Vec::new();
    match &e.task {
        TaskKind::Sentiment => {
            parts.push("sentiment:".to_string());
            parts.push(e.segment("review").unwrap_or_default().to_string());
        }
        task => {
            parts.push(task.id().to_string());
            for name in task.segment_names() {
                parts.push(format!("{name}:"));
                parts.push(e.segment(name).unwrap_or_default().to_string());
            }
        }
    }
    for choice in e.choices.iter().flatten() {
        parts.push("choice:".to_string());
        parts.push(choice.clone());
    }
    parts
}

/// Serialized input, with or without the `explain` request.
pub fn format_input(e: &Example, explain: bool) -> String {
    let mut text = String::new();
    if explain {
        text.push_str(EXPLAIN_PREFIX);
    }
    let parts = input_parts(e);
    let mut first = true;
    for part in parts.iter().filter(|p| !p.is_empty()) {
        if !first {
            text.push(' ');
        }
        text.push_str(part);
        first = false;
    }
    text
}

/// Label followed by the explanations (in target order) when requested.
pub fn format_target(e: &Example, with_explanation: bool) -> Result<String, FormatError> {
    let mut target = e.label.clone();
    if with_explanation {
        if !e.has_explanation {
            return Err(FormatError::MissingExplanation(e.id.clone()));
        }
        for explanation in e.ordered_explanations() {
            let text = e
                .explanation_text(explanation)
                .ok_or_else(|| FormatError::InvalidSpan(e.id.clone()))?;
            target.push_str(SEPARATOR);
            target.push_str(text);
        }
    }
    Ok(target)
}

pub fn format_example(e: &Example, with_explanation: bool) -> Result<FormattedPair, FormatError> {
    let target_text = format_target(e, with_explanation)?;
    Ok(FormattedPair {
        input_text: format_input(e, with_explanation),
        target_text,
        wants_explanation: with_explanation,
    })
}

pub fn format_corpus(examples: &[Example], policy: &[bool]) -> Result<Vec<FormattedPair>, FormatError> {
    if examples.len() != policy.len() {
        return Err(FormatError::PolicyLength {
            expected: examples.len(),
            got: policy.len(),
        });
    }
    examples
        .iter()
        .zip(policy)
        .map(|(e, &explain)| format_example(e, explain))
        .collect()
}

/// File layout for formatted pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairFormat {
    #[default]
    Jsonl,
    Tsv,
}

impl FromStr for PairFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(PairFormat::Jsonl),
            "tsv" => Ok(PairFormat::Tsv),
            other => Err(format!("unknown pair format `{other}` (expected jsonl or tsv)")),
        }
    }
}

impl PairFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PairFormat::Jsonl => "jsonl",
            PairFormat::Tsv => "tsv",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord<'a> {
    input: std::borrow::Cow<'a, str>,
    target: std::borrow::Cow<'a, str>,
}

// TSV escaping: backslash, tab, newline and carriage return.
fn tsv_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn tsv_unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(format!(
                    "bad escape sequence \\{}",
                    other.map(String::from).unwrap_or_default()
                ))
            }
        }
    }
    Ok(out)
}

pub fn write_pairs<'a>(
    mut writer: impl Write,
    pairs: impl IntoIterator<Item = &'a FormattedPair>,
    format: PairFormat,
) -> std::io::Result<()> {
    for pair in pairs {
        match format {
            PairFormat::Jsonl => {
                let record = PairRecord {
                    input: pair.input_text.as_str().into(),
                    target: pair.target_text.as_str().into(),
                };
                serde_json::to_writer(&mut writer, &record)?;
                writer.write_all(b"\n")?;
            }
            PairFormat::Tsv => {
                writeln!(
                    writer,
                    "{}\t{}",
                    tsv_escape(&pair.input_text),
                    tsv_escape(&pair.target_text)
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum PairReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn read_pairs(reader: impl BufRead, format: PairFormat) -> Result<Vec<FormattedPair>, PairReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| PairReadError::Malformed { line: i + 1, message };
        let pair = match format {
            PairFormat::Jsonl => {
                let r: PairRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
                FormattedPair::new(r.input.into_owned(), r.target.into_owned())
            }
            PairFormat::Tsv => {
                let (input, target) = line
                    .split_once('\t')
                    .ok_or_else(|| malformed("expected two tab-separated fields".into()))?;
                FormattedPair::new(
                    tsv_unescape(input).map_err(malformed)?,
                    tsv_unescape(target).map_err(malformed)?,
                )
            }
        };
        out.push(pair);
    }
    Ok(out)
}
