//! Labeled examples, task definitions and JSONL ingestion.
//!
//! An [`Example`] keeps its explanations structurally (free text or a
//! character span into one of its segments). Turning them into target text is
//! the job of [`crate::formatter`].
//!
//! Character offsets are counted in Unicode scalar values, so a span is the
//! same regardless of how the file is encoded on disk.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::SEPARATOR;

pub const NLI_LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];
pub const SENTIMENT_LABELS: [&str; 2] = ["positive", "negative"];
pub const MULTIRC_LABELS: [&str; 2] = ["True", "False"];

/// A task definition: its serialization prefix, the named input segments it
/// expects and the labels it allows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Sentiment,
    Nli,
    CosE,
    MultiRc,
    Custom(CustomTask),
}

/// User-defined task. Without a label set any label is accepted, unless the
/// example carries choices, in which case the label must be one of them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CustomTask {
    pub id: String,
    pub segments: Vec<String>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl TaskKind {
    pub fn id(&self) -> &str {
        match self {
            TaskKind::Sentiment => "sentiment",
            TaskKind::Nli => "nli",
            TaskKind::CosE => "cos_e",
            TaskKind::MultiRc => "multirc",
            TaskKind::Custom(c) => &c.id,
        }
    }

    /// Segment names in serialization order.
    pub fn segment_names(&self) -> Vec<&str> {
        match self {
            TaskKind::Sentiment => vec!["review"],
            TaskKind::Nli => vec!["hypothesis", "premise"],
            TaskKind::CosE => vec!["question"],
            TaskKind::MultiRc => vec!["question", "answer", "paragraph"],
            TaskKind::Custom(c) => c.segments.iter().map(String::as_str).collect(),
        }
    }

    pub fn label_set(&self) -> Option<Vec<&str>> {
        match self {
            TaskKind::Sentiment => Some(SENTIMENT_LABELS.to_vec()),
            TaskKind::Nli => Some(NLI_LABELS.to_vec()),
            TaskKind::CosE => None,
            TaskKind::MultiRc => Some(MULTIRC_LABELS.to_vec()),
            TaskKind::Custom(c) => c.labels.as_ref().map(|l| l.iter().map(String::as_str).collect()),
        }
    }

    pub fn requires_choices(&self) -> bool {
        matches!(self, TaskKind::CosE)
    }

    /// Position of a segment in serialization order.
    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segment_names().iter().position(|s| *s == name)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Custom(c) => {
                write!(f, "custom:{}:{}", c.id, c.segments.join(","))?;
                if let Some(labels) = &c.labels {
                    write!(f, ":{}", labels.join(","))?;
                }
                Ok(())
            }
            other => f.write_str(other.id()),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown task `{0}` (expected sentiment, nli, cos_e, multirc or custom:ID:SEG,..[:LABEL,..])")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentiment" => Ok(TaskKind::Sentiment),
            "nli" | "esnli" | "e-snli" => Ok(TaskKind::Nli),
            "cos_e" | "cose" => Ok(TaskKind::CosE),
            "multirc" => Ok(TaskKind::MultiRc),
            _ => {
                let rest = s.strip_prefix("custom:").ok_or_else(|| UnknownTask(s.to_string()))?;
                let mut parts = rest.splitn(3, ':');
                let id = parts.next().unwrap_or_default();
                let segments = parts.next().unwrap_or_default();
                if id.is_empty() || segments.is_empty() {
                    return Err(UnknownTask(s.to_string()));
                }
                let split = |v: &str| v.split(',').map(str::to_string).collect::<Vec<_>>();
                Ok(TaskKind::Custom(CustomTask {
                    id: id.to_string(),
                    segments: split(segments),
                    labels: parts.next().map(split),
                }))
            }
        }
    }
}

/// Half-open character range `[start, end)` inside a named segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub segment: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(segment: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            segment: segment.into(),
            start,
            end,
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.segment == other.segment && self.start < other.end && other.start < self.end
    }

    /// The covered text, if the span is valid for `text`.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        char_slice(text, self.start, self.end)
    }
}

/// Substring of `text` between two character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start >= end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain([text.len()]);
    let from = indices.nth(start)?;
    let to = indices.nth(end - start - 1)?;
    Some(&text[from..to])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "ExplanationRecord", into = "ExplanationRecord")]
pub enum Explanation {
    Abstractive(String),
    Extractive(Span),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExplanationRecord {
    Text { text: String },
    Span(Span),
}

impl From<ExplanationRecord> for Explanation {
    fn from(r: ExplanationRecord) -> Self {
        match r {
            ExplanationRecord::Text { text } => Explanation::Abstractive(text),
            ExplanationRecord::Span(span) => Explanation::Extractive(span),
        }
    }
}

impl From<Explanation> for ExplanationRecord {
    fn from(e: Explanation) -> Self {
        match e {
            Explanation::Abstractive(text) => ExplanationRecord::Text { text },
            Explanation::Extractive(span) => ExplanationRecord::Span(span),
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("id: must be non-empty")]
    EmptyId,
    #[error("segments: missing segment `{0}`")]
    MissingSegment(String),
    #[error("segments: unexpected segment `{0}`")]
    UnexpectedSegment(String),
    #[error("label: must be non-empty without surrounding whitespace, got {0:?}")]
    MalformedLabel(String),
    #[error("label: `{label}` is not in the label set of task {task}")]
    LabelNotInSet { label: String, task: String },
    #[error("choices: task {0} requires a non-empty choice list")]
    MissingChoices(String),
    #[error("label: `{0}` is not one of the choices")]
    LabelNotInChoices(String),
    #[error("has_explanation: flag is {flag} but {count} explanations are present")]
    ExplanationFlag { flag: bool, count: usize },
    #[error("explanations[{0}]: text must be non-empty")]
    EmptyExplanation(usize),
    #[error("explanations[{0}]: text must not contain a newline")]
    NewlineInExplanation(usize),
    #[error("{field}: text {text:?} collides with the `explanation:` target separator")]
    SeparatorCollision { field: String, text: String },
    #[error("explanations[{index}]: span refers to unknown segment `{segment}`")]
    UnknownSpanSegment { index: usize, segment: String },
    #[error("explanations[{index}]: span bounds [{start}, {end}) invalid for segment `{segment}` of length {len}")]
    SpanBounds {
        index: usize,
        segment: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("explanations: spans [{}, {}) and [{}, {}) overlap in segment `{}`", .first.start, .first.end, .second.start, .second.end, .first.segment)]
    OverlappingSpans { first: Span, second: Span },
}

/// A labeled instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub task: TaskKind,
    pub segments: IndexMap<String, String>,
    pub choices: Option<Vec<String>>,
    pub label: String,
    pub explanations: Vec<Explanation>,
    pub has_explanation: bool,
}

impl Example {
    /// Builds and validates an example; `has_explanation` is derived.
    pub fn new(
        id: impl Into<String>,
        task: TaskKind,
        segments: IndexMap<String, String>,
        choices: Option<Vec<String>>,
        label: impl Into<String>,
        explanations: Vec<Explanation>,
    ) -> Result<Self, ValidationError> {
        let example = Example {
            id: id.into(),
            task,
            segments,
            choices,
            label: label.into(),
            has_explanation: !explanations.is_empty(),
            explanations,
        };
        validate_example(&example)?;
        Ok(example)
    }

    pub fn segment(&self, name: &str) -> Option<&str> {
        self.segments.get(name).map(String::as_str)
    }

    /// Text of one explanation as it appears in a target.
    pub fn explanation_text<'a>(&'a self, explanation: &'a Explanation) -> Option<&'a str> {
        match explanation {
            Explanation::Abstractive(text) => Some(text),
            Explanation::Extractive(span) => span.slice(self.segment(&span.segment)?),
        }
    }

    /// Explanations in target order: stored order, except that purely
    /// extractive explanation lists are emitted in input order.
    pub fn ordered_explanations(&self) -> Vec<&Explanation> {
        let mut out: Vec<&Explanation> = self.explanations.iter().collect();
        let all_spans = out.iter().all(|e| matches!(e, Explanation::Extractive(_)));
        if all_spans {
            out.sort_by_key(|e| match e {
                Explanation::Extractive(s) => (self.task.segment_index(&s.segment).unwrap_or(usize::MAX), s.start),
                Explanation::Abstractive(_) => unreachable!(),
            });
        }
        out
    }

    /// Explanation texts in target order.
    pub fn explanation_texts(&self) -> Vec<&str> {
        self.ordered_explanations()
            .into_iter()
            .filter_map(|e| self.explanation_text(e))
            .collect()
    }

    /// Drops all explanations.
    pub fn without_explanations(mut self) -> Self {
        self.explanations.clear();
        self.has_explanation = false;
        self
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            segments: self.segments.clone(),
            choices: self.choices.clone(),
            label: self.label.clone(),
            explanations: self.explanations.clone(),
        }
    }

    /// The extractive spans of this example, in stored order.
    pub fn gold_spans(&self) -> Vec<&Span> {
        self.explanations
            .iter()
            .filter_map(|e| match e {
                Explanation::Extractive(s) => Some(s),
                Explanation::Abstractive(_) => None,
            })
            .collect()
    }
}

/// On-disk shape of one JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub segments: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub label: String,
    #[serde(default)]
    pub explanations: Vec<Explanation>,
}

impl Record {
    pub fn into_example(self, task: TaskKind) -> Result<Example, ValidationError> {
        Example::new(
            self.id,
            task,
            self.segments,
            self.choices,
            self.label,
            self.explanations,
        )
    }
}

/// True when `text` could not survive a round trip through the target grammar.
pub(crate) fn collides_with_separator(text: &str) -> bool {
    let keyword = SEPARATOR.trim_start();
    text.contains(SEPARATOR) || text.starts_with(keyword) || text.ends_with(SEPARATOR.trim_end())
}

pub fn validate_example(e: &Example) -> Result<(), ValidationError> {
    if e.id.is_empty() {
        return Err(ValidationError::EmptyId);
    }
    let names = e.task.segment_names();
    for name in &names {
        if !e.segments.contains_key(*name) {
            return Err(ValidationError::MissingSegment(name.to_string()));
        }
    }
    if let Some(extra) = e.segments.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(ValidationError::UnexpectedSegment(extra.clone()));
    }

    if e.label.is_empty() || e.label.trim() != e.label {
        return Err(ValidationError::MalformedLabel(e.label.clone()));
    }
    if e.label.contains(SEPARATOR) || e.label.ends_with(SEPARATOR.trim_end()) {
        return Err(ValidationError::SeparatorCollision {
            field: "label".into(),
            text: e.label.clone(),
        });
    }
    if let Some(set) = e.task.label_set() {
        if !set.contains(&e.label.as_str()) {
            return Err(ValidationError::LabelNotInSet {
                label: e.label.clone(),
                task: e.task.id().to_string(),
            });
        }
    }
    match &e.choices {
        Some(choices) if !choices.is_empty() => {
            if !choices.contains(&e.label) {
                return Err(ValidationError::LabelNotInChoices(e.label.clone()));
            }
        }
        _ if e.task.requires_choices() => {
            return Err(ValidationError::MissingChoices(e.task.id().to_string()));
        }
        _ => {}
    }

    if e.has_explanation == e.explanations.is_empty() {
        return Err(ValidationError::ExplanationFlag {
            flag: e.has_explanation,
            count: e.explanations.len(),
        });
    }

    let mut spans: Vec<&Span> = Vec::new();
    for (index, explanation) in e.explanations.iter().enumerate() {
        let text = match explanation {
            Explanation::Abstractive(text) => {
                if text.is_empty() {
                    return Err(ValidationError::EmptyExplanation(index));
                }
                if text.contains('\n') || text.contains('\r') {
                    return Err(ValidationError::NewlineInExplanation(index));
                }
                text.as_str()
            }
            Explanation::Extractive(span) => {
                let segment = e
                    .segments
                    .get(&span.segment)
                    .ok_or_else(|| ValidationError::UnknownSpanSegment {
                        index,
                        segment: span.segment.clone(),
                    })?;
                let len = segment.chars().count();
                if span.start >= span.end || span.end > len {
                    return Err(ValidationError::SpanBounds {
                        index,
                        segment: span.segment.clone(),
                        start: span.start,
                        end: span.end,
                        len,
                    });
                }
                spans.push(span);
                span.slice(segment).expect("bounds checked")
            }
        };
        if collides_with_separator(text) {
            return Err(ValidationError::SeparatorCollision {
                field: format!("explanations[{index}]"),
                text: text.to_string(),
            });
        }
    }

    spans.sort_by(|a, b| (&a.segment, a.start).cmp(&(&b.segment, b.start)));
    for pair in spans.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(ValidationError::OverlappingSpans {
                first: pair[0].clone(),
                second: pair[1].clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line} (id `{id}`): {source}")]
    Invalid {
        line: usize,
        id: String,
        #[source]
        source: ValidationError,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl CorpusError {
    /// 1-based line number of the offending record, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Io { .. } => None,
            CorpusError::Malformed { line, .. }
            | CorpusError::Invalid { line, .. }
            | CorpusError::DuplicateId { line, .. } => Some(*line),
        }
    }
}

/// Reads a JSONL corpus. Line order is preserved; blank lines are skipped.
pub fn load_examples(path: impl AsRef<Path>, task: &TaskKind) -> Result<Vec<Example>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_examples(BufReader::new(file), task).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_examples(reader: impl BufRead, task: &TaskKind) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: line_no, source })?;
        let id = record.id.clone();
        let example = record
            .into_example(task.clone())
            .map_err(|source| CorpusError::Invalid {
                line: line_no,
                id: id.clone(),
                source,
            })?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id });
        }
        out.push(example);
    }
    Ok(out)
}

pub fn write_examples<'a>(
    mut writer: impl Write,
    examples: impl IntoIterator<Item = &'a Example>,
) -> std::io::Result<()> {
    for e in examples {
        serde_json::to_writer(&mut writer, &e.to_record())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REVIEW: &str = "I went to see this movie with my husband, and we both thought the acting was terrible!";

    fn review_example(explanations: Vec<Explanation>) -> Result<Example, ValidationError> {
        let mut segments = IndexMap::new();
        segments.insert("review".to_string(), REVIEW.to_string());
        Example::new("r1", TaskKind::Sentiment, segments, None, "negative", explanations)
    }

    #[test]
    fn loads_abstractive_line() {
        let line = r#"{"id":"r1","segments":{"review":"…the acting was terrible!"},"label":"negative","explanations":[{"text":"the acting was terrible"}]}"#;
        let examples = read_examples(line.as_bytes(), &TaskKind::Sentiment).unwrap();
        assert_eq!(examples.len(), 1);
        assert!(examples[0].has_explanation);
        assert_eq!(
            examples[0].explanations,
            vec![Explanation::Abstractive("the acting was terrible".into())]
        );
    }

    #[test]
    fn empty_explanations_clear_flag() {
        let line = r#"{"id":"r2","segments":{"review":"fine"},"label":"positive","explanations":[]}"#;
        let examples = read_examples(line.as_bytes(), &TaskKind::Sentiment).unwrap();
        assert!(!examples[0].has_explanation);
    }

    #[test]
    fn span_past_segment_end_is_rejected() {
        let line = r#"{"id":"r3","segments":{"review":"short"},"label":"positive","explanations":[{"segment":"review","start":0,"end":9}]}"#;
        let err = read_examples(line.as_bytes(), &TaskKind::Sentiment).unwrap_err();
        assert_eq!(err.line(), Some(1));
        assert!(err.to_string().contains("span bounds"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"segments\":{\"review\":\"x\"},\"label\":\"positive\"}\n{oops\n";
        let err = read_examples(text.as_bytes(), &TaskKind::Sentiment).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn label_outside_set() {
        let mut segments = IndexMap::new();
        segments.insert("review".to_string(), "x".to_string());
        let err = Example::new("a", TaskKind::Sentiment, segments, None, "meh", vec![]).unwrap_err();
        assert!(matches!(err, ValidationError::LabelNotInSet { .. }));
    }

    #[test]
    fn cose_label_must_be_a_choice() {
        let mut segments = IndexMap::new();
        segments.insert("question".to_string(), "Where?".to_string());
        let choices = Some(vec!["here".to_string(), "there".to_string()]);
        let err = Example::new(
            "c",
            TaskKind::CosE,
            segments.clone(),
            choices.clone(),
            "nowhere",
            vec![],
        )
        .unwrap_err();
        assert_eq!(err, ValidationError::LabelNotInChoices("nowhere".into()));
        let err = Example::new("c", TaskKind::CosE, segments.clone(), None, "here", vec![]).unwrap_err();
        assert!(matches!(err, ValidationError::MissingChoices(_)));
        assert!(Example::new("c", TaskKind::CosE, segments, choices, "here", vec![]).is_ok());
    }

    #[test]
    fn overlapping_spans_rejected() {
        let err = review_example(vec![
            Explanation::Extractive(Span::new("review", 0, 10)),
            Explanation::Extractive(Span::new("review", 5, 12)),
        ])
        .unwrap_err();
        assert!(matches!(err, ValidationError::OverlappingSpans { .. }));
        // touching is fine
        assert!(review_example(vec![
            Explanation::Extractive(Span::new("review", 0, 5)),
            Explanation::Extractive(Span::new("review", 5, 12)),
        ])
        .is_ok());
    }

    #[test]
    fn well_formed_sentiment_example() {
        assert!(review_example(vec![Explanation::Abstractive("the acting was terrible".into())]).is_ok());
    }

    #[test]
    fn flag_mismatch_detected() {
        let mut e = review_example(vec![]).unwrap();
        e.has_explanation = true;
        assert!(matches!(
            validate_example(&e),
            Err(ValidationError::ExplanationFlag { .. })
        ));
    }

    #[test]
    fn segment_set_must_match_task() {
        let mut segments = IndexMap::new();
        segments.insert("premise".to_string(), "p".to_string());
        let err = Example::new("n", TaskKind::Nli, segments.clone(), None, "neutral", vec![]).unwrap_err();
        assert_eq!(err, ValidationError::MissingSegment("hypothesis".into()));
        segments.insert("hypothesis".to_string(), "h".to_string());
        segments.insert("extra".to_string(), "?".to_string());
        let err = Example::new("n", TaskKind::Nli, segments, None, "neutral", vec![]).unwrap_err();
        assert_eq!(err, ValidationError::UnexpectedSegment("extra".into()));
    }

    #[test]
    fn separator_in_text_rejected() {
        let err = review_example(vec![Explanation::Abstractive("a explanation: b".into())]).unwrap_err();
        assert!(matches!(err, ValidationError::SeparatorCollision { .. }));
        let err = review_example(vec![Explanation::Abstractive("line\nbreak".into())]).unwrap_err();
        assert_eq!(err, ValidationError::NewlineInExplanation(0));
    }

    #[test]
    fn offsets_count_scalar_values() {
        let text = "naïve café";
        assert_eq!(char_slice(text, 6, 10), Some("café"));
        assert_eq!(char_slice(text, 0, 5), Some("naïve"));
        assert_eq!(char_slice(text, 6, 11), None);
        assert_eq!(char_slice(text, 3, 3), None);
    }

    #[test]
    fn task_parsing() {
        assert_eq!("cos_e".parse::<TaskKind>().unwrap(), TaskKind::CosE);
        let t: TaskKind = "custom:qa:question,context:yes,no".parse().unwrap();
        assert_eq!(t.segment_names(), vec!["question", "context"]);
        assert_eq!(t.label_set(), Some(vec!["yes", "no"]));
        assert_eq!(t.to_string().parse::<TaskKind>().unwrap(), t);
        assert!("bogus".parse::<TaskKind>().is_err());
    }

    #[test]
    fn record_round_trip() {
        let e = review_example(vec![
            Explanation::Extractive(Span::new("review", 62, 85)),
            Explanation::Abstractive("bad acting".into()),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_examples(&mut buf, [&e]).unwrap();
        let back = read_examples(buf.as_slice(), &TaskKind::Sentiment).unwrap();
        assert_eq!(back, vec![e]);
    }
}
