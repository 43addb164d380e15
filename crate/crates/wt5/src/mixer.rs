//! Training mixtures: limited-explanation subsampling, cross-dataset
//! mixtures and the rewrites that align CoS-E with NLI formatting.
//!
//! Mixing is concatenate-then-shuffle. Every random choice is driven by the
//! seed in [`MixtureSpec`]; there is no default seed.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_example, CustomTask, Example, Explanation, TaskKind, ValidationError, NLI_LABELS};
use crate::formatter::{format_example, format_input, FormatError, FormattedPair};

#[derive(Debug, thiserror::Error)]
pub enum MixError {
    #[error("cannot keep {requested} explanations: only {available} examples are annotated")]
    KeepTooLarge { requested: usize, available: usize },
    #[error("mixture source `{0}` is not a known corpus")]
    UnknownCorpus(String),
    #[error("example `{id}`: rewrite {rewrite} needs task {expected}, found {found}")]
    WrongTask {
        id: String,
        rewrite: &'static str,
        expected: &'static str,
        found: String,
    },
    #[error("star rating {0} is outside 1..=5")]
    RatingOutOfRange(i64),
    #[error("example `{id}`: {source}")]
    Invalid {
        id: String,
        #[source]
        source: ValidationError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("mixture config: {0}")]
    Config(String),
}

/// Keeps explanations on exactly `n_keep` annotated examples chosen
/// uniformly at random; all others become label-only. Order and labels are
/// untouched.
pub fn subsample_explanations(examples: &[Example], n_keep: usize, seed: u64) -> Result<Vec<Example>, MixError> {
    let annotated: Vec<usize> = examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.has_explanation)
        .map(|(i, _)| i)
        .collect();
    if n_keep > annotated.len() {
        return Err(MixError::KeepTooLarge {
            requested: n_keep,
            available: annotated.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; examples.len()];
    for k in index::sample(&mut rng, annotated.len(), n_keep) {
        keep[annotated[k]] = true;
    }
    Ok(examples
        .iter()
        .zip(keep)
        .map(|(e, kept)| {
            if kept {
                e.clone()
            } else {
                e.clone().without_explanations()
            }
        })
        .collect())
}

/// Inference-time inputs that ask for an explanation on every example.
pub fn request_explanations(examples: &[Example]) -> Vec<String> {
    examples.iter().map(|e| format_input(e, true)).collect()
}

/// Serializes a CoS-E example with NLI tokens: `nli premise: <question>
/// choice: ...`. Choices, label and explanation texts are unchanged.
pub fn rewrite_cose_as_nli(e: &Example) -> Result<Example, MixError> {
    if e.task != TaskKind::CosE {
        return Err(MixError::WrongTask {
            id: e.id.clone(),
            rewrite: "cose-as-nli",
            expected: "cos_e",
            found: e.task.id().to_string(),
        });
    }
    let segments: IndexMap<String, String> = e
        .segments
        .iter()
        .map(|(k, v)| {
            (
                if k == "question" {
                    "premise".to_string()
                } else {
                    k.clone()
                },
                v.clone(),
            )
        })
        .collect();
    let explanations = e
        .explanations
        .iter()
        .map(|x| match x {
            Explanation::Extractive(span) if span.segment == "question" => {
                let mut span = span.clone();
                span.segment = "premise".into();
                Explanation::Extractive(span)
            }
            other => other.clone(),
        })
        .collect();
    let out = Example {
        id: e.id.clone(),
        task: TaskKind::Custom(CustomTask {
            id: "nli".into(),
            segments: vec!["premise".into()],
            labels: None,
        }),
        segments,
        choices: e.choices.clone(),
        label: e.label.clone(),
        explanations,
        has_explanation: e.has_explanation,
    };
    validate_example(&out).map_err(|source| MixError::Invalid {
        id: out.id.clone(),
        source,
    })?;
    Ok(out)
}

/// Attaches the three NLI labels as choices. Idempotent.
pub fn add_fixed_nli_choices(e: &Example) -> Result<Example, MixError> {
    if e.task != TaskKind::Nli {
        return Err(MixError::WrongTask {
            id: e.id.clone(),
            rewrite: "fixed-nli-choices",
            expected: "nli",
            found: e.task.id().to_string(),
        });
    }
    let mut out = e.clone();
    out.choices = Some(NLI_LABELS.iter().map(|s| s.to_string()).collect());
    Ok(out)
}

/// Which star ratings count as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolarityMap {
    /// 4-5 stars positive, 1-2 negative.
    #[default]
    Conventional,
    /// 1-2 stars positive, 4-5 negative.
    Literal,
}

/// Maps a 1-5 star rating to a sentiment label; 3 stars is dropped (`None`).
pub fn binarize_stars(rating: i64, map: PolarityMap) -> Result<Option<&'static str>, MixError> {
    let high = match rating {
        1 | 2 => false,
        3 => return Ok(None),
        4 | 5 => true,
        other => return Err(MixError::RatingOutOfRange(other)),
    };
    let positive = match map {
        PolarityMap::Conventional => high,
        PolarityMap::Literal => !high,
    };
    Ok(Some(if positive { "positive" } else { "negative" }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExplanationPolicy {
    /// Explain every annotated example.
    All,
    /// Label-only pairs for everything.
    None,
    /// Keep explanations on N randomly chosen annotated examples.
    Keep(usize),
}

impl FromStr for ExplanationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(ExplanationPolicy::All),
            "none" => Ok(ExplanationPolicy::None),
            _ => s
                .strip_prefix("keep-")
                .and_then(|n| n.parse().ok())
                .map(ExplanationPolicy::Keep)
                .ok_or_else(|| format!("unknown explanation policy `{s}` (expected all, none or keep-N)")),
        }
    }
}

impl fmt::Display for ExplanationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplanationPolicy::All => f.write_str("all"),
            ExplanationPolicy::None => f.write_str("none"),
            ExplanationPolicy::Keep(n) => write!(f, "keep-{n}"),
        }
    }
}

impl Serialize for ExplanationPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExplanationPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rewrite {
    CoseAsNli,
    FixedNliChoices,
}

impl Rewrite {
    pub fn apply(self, e: &Example) -> Result<Example, MixError> {
        match self {
            Rewrite::CoseAsNli => rewrite_cose_as_nli(e),
            Rewrite::FixedNliChoices => add_fixed_nli_choices(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSource {
    pub corpus: String,
    pub policy: ExplanationPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<Rewrite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub sources: Vec<MixtureSource>,
    pub seed: u64,
    #[serde(default)]
    pub shuffle: bool,
}

/// Per-source seed for keep-N subsampling.
fn source_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Pair counts contributed by one mixture source, before shuffling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceSummary {
    pub corpus: String,
    pub policy: ExplanationPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<Rewrite>,
    pub pairs: usize,
    pub explained: usize,
}

/// Formats each source by its policy, concatenates, then shuffles if asked.
pub fn build_mixture(
    spec: &MixtureSpec,
    corpora: &HashMap<String, Vec<Example>>,
) -> Result<Vec<FormattedPair>, MixError> {
    build_mixture_with_summary(spec, corpora).map(|(pairs, _)| pairs)
}

/// [`build_mixture`] plus per-source counts.
pub fn build_mixture_with_summary(
    spec: &MixtureSpec,
    corpora: &HashMap<String, Vec<Example>>,
) -> Result<(Vec<FormattedPair>, Vec<SourceSummary>), MixError> {
    let mut pairs = Vec::new();
    let mut summary = Vec::with_capacity(spec.sources.len());
    for (i, source) in spec.sources.iter().enumerate() {
        let examples = corpora
            .get(&source.corpus)
            .ok_or_else(|| MixError::UnknownCorpus(source.corpus.clone()))?;
        let examples = match source.rewrite {
            Some(rewrite) => examples
                .iter()
                .map(|e| rewrite.apply(e))
                .collect::<Result<Vec<_>, _>>()?,
            None => examples.clone(),
        };
        let examples = match source.policy {
            ExplanationPolicy::Keep(n) => subsample_explanations(&examples, n, source_seed(spec.seed, i))?,
            _ => examples,
        };
        let mut explained = 0;
        for e in &examples {
            let explain = source.policy != ExplanationPolicy::None && e.has_explanation;
            explained += usize::from(explain);
            pairs.push(format_example(e, explain)?);
        }
        summary.push(SourceSummary {
            corpus: source.corpus.clone(),
            policy: source.policy,
            rewrite: source.rewrite,
            pairs: examples.len(),
            explained,
        });
    }
    if spec.shuffle {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    }
    Ok((pairs, summary))
}

/// Where a mixture corpus lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRef {
    pub path: PathBuf,
    pub task: String,
}

/// Declarative mixture file (TOML):
///
/// ```toml
/// seed = 7
/// shuffle = true
///
/// [corpora.esnli]
/// path = "esnli.jsonl"
/// task = "nli"
///
/// [[sources]]
/// corpus = "esnli"
/// policy = "keep-100"          # all | none | keep-N
/// rewrite = "fixed-nli-choices" # optional: cose-as-nli | fixed-nli-choices
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub seed: u64,
    #[serde(default)]
    pub shuffle: bool,
    pub corpora: IndexMap<String, CorpusRef>,
    pub sources: Vec<MixtureSource>,
}

impl MixtureConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, MixError> {
        let config: MixtureConfig = toml::from_str(text).map_err(|e| MixError::Config(e.to_string()))?;
        for source in &config.sources {
            if !config.corpora.contains_key(&source.corpus) {
                return Err(MixError::UnknownCorpus(source.corpus.clone()));
            }
        }
        Ok(config)
    }

    pub fn spec(&self) -> MixtureSpec {
        MixtureSpec {
            sources: self.sources.clone(),
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formatter::format_input;

    fn sentiment(id: &str, explained: bool) -> Example {
        let mut segments = IndexMap::new();
        segments.insert("review".to_string(), format!("review {id} was great"));
        let explanations = if explained {
            vec![Explanation::Abstractive("was great".into())]
        } else {
            vec![]
        };
        Example::new(id, TaskKind::Sentiment, segments, None, "positive", explanations).unwrap()
    }

    fn corpus(n: usize) -> Vec<Example> {
        (0..n).map(|i| sentiment(&format!("e{i}"), true)).collect()
    }

    fn cose() -> Example {
        let mut segments = IndexMap::new();
        segments.insert(
            "question".to_string(),
            "Where can one obtain a bass fiddle?".to_string(),
        );
        Example::new(
            "q1",
            TaskKind::CosE,
            segments,
            Some(vec!["music store".into(), "jazz band".into(), "orchestra".into()]),
            "music store",
            vec![],
        )
        .unwrap()
    }

    fn nli() -> Example {
        let mut segments = IndexMap::new();
        segments.insert("hypothesis".to_string(), "A dog sleeps.".to_string());
        segments.insert("premise".to_string(), "A dog runs.".to_string());
        Example::new(
            "n1",
            TaskKind::Nli,
            segments,
            None,
            "contradiction",
            vec![Explanation::Abstractive("running is not sleeping".into())],
        )
        .unwrap()
    }

    #[test]
    fn keep_all_is_identity_and_zero_clears() {
        let c = corpus(20);
        assert_eq!(subsample_explanations(&c, 20, 1).unwrap(), c);
        let none = subsample_explanations(&c, 0, 1).unwrap();
        assert!(none.iter().all(|e| !e.has_explanation && e.explanations.is_empty()));
        assert!(matches!(
            subsample_explanations(&c, 21, 1),
            Err(MixError::KeepTooLarge {
                requested: 21,
                available: 20
            })
        ));
    }

    #[test]
    fn keep_n_counts_and_seeds() {
        let c = corpus(1000);
        let a = subsample_explanations(&c, 100, 1).unwrap();
        let b = subsample_explanations(&c, 100, 2).unwrap();
        let kept = |v: &[Example]| {
            v.iter()
                .filter(|e| e.has_explanation)
                .map(|e| e.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(kept(&a).len(), 100);
        assert_eq!(kept(&b).len(), 100);
        assert_ne!(kept(&a), kept(&b));
        assert_eq!(a, subsample_explanations(&c, 100, 1).unwrap());
        for (x, y) in a.iter().zip(&c) {
            assert_eq!((&x.id, &x.label, &x.segments), (&y.id, &y.label, &y.segments));
        }
    }

    #[test]
    fn cose_rewritten_with_nli_tokens() {
        let r = rewrite_cose_as_nli(&cose()).unwrap();
        assert_eq!(
            format_input(&r, true),
            "explain nli premise: Where can one obtain a bass fiddle? choice: music store choice: jazz band choice: orchestra"
        );
        assert_eq!(r.label, "music store");
        assert_eq!(r.segment("premise"), cose().segment("question"));
        assert!(matches!(rewrite_cose_as_nli(&nli()), Err(MixError::WrongTask { .. })));
    }

    #[test]
    fn fixed_choices() {
        let once = add_fixed_nli_choices(&nli()).unwrap();
        assert!(format_input(&once, false).contains("choice: entailment choice: neutral choice: contradiction"));
        assert_eq!(add_fixed_nli_choices(&once).unwrap(), once);
        assert_eq!(once.label, "contradiction");
        assert!(add_fixed_nli_choices(&cose()).is_err());
    }

    #[test]
    fn star_binarization() {
        assert_eq!(binarize_stars(3, PolarityMap::default()).unwrap(), None);
        assert_eq!(binarize_stars(5, PolarityMap::default()).unwrap(), Some("positive"));
        assert_eq!(binarize_stars(1, PolarityMap::default()).unwrap(), Some("negative"));
        assert_eq!(binarize_stars(1, PolarityMap::Literal).unwrap(), Some("positive"));
        assert_eq!(binarize_stars(4, PolarityMap::Literal).unwrap(), Some("negative"));
        assert!(matches!(
            binarize_stars(0, PolarityMap::default()),
            Err(MixError::RatingOutOfRange(0))
        ));
        assert!(binarize_stars(6, PolarityMap::default()).is_err());
    }

    #[test]
    fn task_transfer_mixture() {
        let mut corpora = HashMap::new();
        corpora.insert("esnli".to_string(), vec![nli(), nli()]);
        corpora.insert("cose".to_string(), vec![cose()]);
        let spec = MixtureSpec {
            sources: vec![
                MixtureSource {
                    corpus: "esnli".into(),
                    policy: ExplanationPolicy::All,
                    rewrite: Some(Rewrite::FixedNliChoices),
                },
                MixtureSource {
                    corpus: "esnli".into(),
                    policy: ExplanationPolicy::None,
                    rewrite: Some(Rewrite::FixedNliChoices),
                },
                MixtureSource {
                    corpus: "cose".into(),
                    policy: ExplanationPolicy::None,
                    rewrite: Some(Rewrite::CoseAsNli),
                },
            ],
            seed: 3,
            shuffle: false,
        };
        let pairs = build_mixture(&spec, &corpora).unwrap();
        assert_eq!(pairs.len(), 5);
        assert_eq!(pairs.iter().filter(|p| p.wants_explanation).count(), 2);
        assert!(pairs[4].input_text.starts_with("nli premise: Where can one obtain"));
        assert_eq!(pairs[4].target_text, "music store");

        let shuffled = build_mixture(
            &MixtureSpec {
                shuffle: true,
                ..spec.clone()
            },
            &corpora,
        )
        .unwrap();
        let mut a: Vec<_> = pairs.iter().map(|p| (&p.input_text, &p.target_text)).collect();
        let mut b: Vec<_> = shuffled.iter().map(|p| (&p.input_text, &p.target_text)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn none_policy_never_explains() {
        let mut corpora = HashMap::new();
        corpora.insert("m".to_string(), corpus(10));
        let spec = MixtureSpec {
            sources: vec![MixtureSource {
                corpus: "m".into(),
                policy: ExplanationPolicy::None,
                rewrite: None,
            }],
            seed: 0,
            shuffle: true,
        };
        assert!(build_mixture(&spec, &corpora)
            .unwrap()
            .iter()
            .all(|p| !p.input_text.starts_with("explain")));
        let missing = MixtureSpec {
            sources: vec![MixtureSource {
                corpus: "x".into(),
                policy: ExplanationPolicy::All,
                rewrite: None,
            }],
            ..spec
        };
        assert!(matches!(
            build_mixture(&missing, &corpora),
            Err(MixError::UnknownCorpus(_))
        ));
    }

    #[test]
    fn request_explanations_prefixes_everything() {
        let c = vec![sentiment("a", false), sentiment("b", true)];
        assert!(request_explanations(&c).iter().all(|i| i.starts_with("explain ")));
        assert!(request_explanations(&[]).is_empty());
    }

    #[test]
    fn config_parsing() {
        let text = r#"
seed = 11
shuffle = true
[corpora.esnli]
path = "esnli.jsonl"
task = "nli"
[[sources]]
corpus = "esnli"
policy = "keep-100"
rewrite = "fixed-nli-choices"
"#;
        let config = MixtureConfig::from_toml_str(text).unwrap();
        assert_eq!(config.sources[0].policy, ExplanationPolicy::Keep(100));
        assert_eq!(config.sources[0].rewrite, Some(Rewrite::FixedNliChoices));
        assert!(MixtureConfig::from_toml_str(&text.replace("seed = 11\n", "")).is_err());
        assert!(MixtureConfig::from_toml_str(&text.replace("keep-100", "some")).is_err());
    }
}
