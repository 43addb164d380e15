//! Explanation-augmented text-to-text toolkit.
//!
//! Labeled examples are serialized into `(input, target)` pairs where an
//! `explain ` prefix on the input asks for `label explanation: ...` targets,
//! and plain inputs ask for the label alone. The crate also parses decoded
//! outputs back into labels and explanations, scores them, builds training
//! mixtures, trains a small recurrent encoder-decoder on the result and runs
//! a batched human rating protocol.
//!
//! ```
//! use wt5::corpus::{Example, Explanation, TaskKind};
//! use wt5::formatter::format_example;
//! use wt5::parser::parse_prediction;
//!
//! let mut segments = indexmap::IndexMap::new();
//! segments.insert("review".to_string(), "the acting was terrible!".to_string());
//! let example = Example::new(
//!     "r1",
//!     TaskKind::Sentiment,
//!     segments,
//!     None,
//!     "negative",
//!     vec![Explanation::Abstractive("the acting was terrible".into())],
//! )
//! .unwrap();
//!
//! let pair = format_example(&example, true).unwrap();
//! assert_eq!(pair.input_text, "explain sentiment: the acting was terrible!");
//! assert_eq!(pair.target_text, "negative explanation: the acting was terrible");
//!
//! let parsed = parse_prediction(&pair.target_text).unwrap();
//! assert_eq!(parsed.label, "negative");
//! assert_eq!(parsed.explanations, vec!["the acting was terrible"]);
//! ```

pub mod corpus;
pub mod formatter;
pub mod metrics;
pub mod mixer;
pub mod parser;
pub mod rating;
pub mod seq2seq;
pub mod synth;

/// Separator between the label and each explanation in a target.
pub const SEPARATOR: &str = " explanation: ";

/// Input prefix that requests an explanation.
pub const EXPLAIN_PREFIX: &str = "explain ";
