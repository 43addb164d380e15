#![allow(dead_code)]

use indexmap::IndexMap;
use proptest::prelude::*;
use wt5::corpus::{CustomTask, Example, Explanation, Span, TaskKind, MULTIRC_LABELS, NLI_LABELS, SENTIMENT_LABELS};

pub fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[a-z]{1,8}",
        1 => "[A-Z][a-z]{0,5}",
        1 => "[0-9]{1,4}",
        1 => "[a-z]{1,5}[.,!?;:]",
        1 => prop::sample::select(vec!["naïve", "café", "über", "¿", "(x)", "\"quoted\"", "$3.50", "日本"])
            .prop_map(String::from),
        1 => prop::sample::select(vec!["explanation", "explanation:", "explain", "sentiment:", "choice:"])
            .prop_map(String::from),
    ]
}

pub fn text(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..=max_words).prop_map(|w| w.join(" "))
}

pub fn task() -> impl Strategy<Value = TaskKind> {
    prop_oneof![
        Just(TaskKind::Sentiment),
        Just(TaskKind::Nli),
        Just(TaskKind::CosE),
        Just(TaskKind::MultiRc),
        Just(TaskKind::Custom(CustomTask {
            id: "qa".into(),
            segments: vec!["question".into(), "context".into()],
            labels: None,
        })),
    ]
}

#[derive(Debug, Clone)]
enum ExplanationPlan {
    None,
    Abstractive(Vec<String>),
    /// (segment index, start seed, length seed)
    Extractive(Vec<(usize, usize, usize)>),
}

fn plan() -> impl Strategy<Value = ExplanationPlan> {
    prop_oneof![
        1 => Just(ExplanationPlan::None),
        2 => prop::collection::vec(text(6), 1..=3).prop_map(ExplanationPlan::Abstractive),
        2 => prop::collection::vec((0usize..4, 0usize..1000, 1usize..12), 1..=3).prop_map(ExplanationPlan::Extractive),
    ]
}

fn build(
    n: usize,
    task: TaskKind,
    texts: Vec<String>,
    choices: Vec<String>,
    label_pick: usize,
    free_label: String,
    plan: ExplanationPlan,
) -> Option<Example> {
    let names: Vec<String> = task.segment_names().iter().map(|s| s.to_string()).collect();
    let segments: IndexMap<String, String> = names.iter().cloned().zip(texts).collect();
    let (choices, label) = match &task {
        TaskKind::Sentiment => (None, SENTIMENT_LABELS[label_pick % 2].to_string()),
        TaskKind::Nli => (None, NLI_LABELS[label_pick % 3].to_string()),
        TaskKind::MultiRc => (None, MULTIRC_LABELS[label_pick % 2].to_string()),
        TaskKind::CosE => {
            let label = choices[label_pick % choices.len()].clone();
            (Some(choices), label)
        }
        TaskKind::Custom(_) => (None, free_label),
    };
    let explanations = match plan {
        ExplanationPlan::None => vec![],
        ExplanationPlan::Abstractive(t) => t.into_iter().map(Explanation::Abstractive).collect(),
        ExplanationPlan::Extractive(raw) => {
            let mut spans: Vec<Span> = Vec::new();
            for (seg, start, len) in raw {
                let name = &names[seg % names.len()];
                let chars = segments[name].chars().count();
                let start = start % chars;
                let end = (start + len).min(chars);
                let span = Span::new(name.clone(), start, end);
                if !spans.iter().any(|s| s.overlaps(&span)) {
                    spans.push(span);
                }
            }
            spans.into_iter().map(Explanation::Extractive).collect()
        }
    };
    Example::new(format!("ex-{n}"), task, segments, choices, label, explanations).ok()
}

/// Random examples that pass corpus validation, across all built-in tasks
/// and a custom one, with abstractive, extractive or no explanations.
pub fn example() -> impl Strategy<Value = Example> {
    (
        any::<u32>(),
        task(),
        prop::collection::vec(text(14), 4),
        prop::collection::vec("[a-z]{1,7}", 2..=5),
        any::<usize>(),
        text(3),
        plan(),
    )
        .prop_filter_map(
            "example rejected by validation",
            |(n, task, texts, mut choices, pick, free, plan)| {
                choices.sort();
                choices.dedup();
                build(n as usize, task, texts, choices, pick, free, plan)
            },
        )
}
