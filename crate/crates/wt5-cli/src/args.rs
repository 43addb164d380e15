use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wt5::formatter::PairFormat;

#[derive(Debug, Parser)]
#[command(name = "wt5", version, about = "Explanation-augmented text-to-text toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sentiment corpus with trigger-word rationales.
    Synth(SynthArgs),
    /// Format a corpus into (input, target) pairs.
    Prepare(PrepareArgs),
    /// Build a training mixture from a TOML mixture file.
    Mix(MixArgs),
    /// Train the toy seq2seq model on formatted pairs.
    Train(TrainArgs),
    /// Decode inputs with a trained model.
    Decode(DecodeArgs),
    /// Score predictions against a gold corpus.
    Score(ScoreArgs),
    /// Run the human rating service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Abstractive,
    Extractive,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of examples (default 1000).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, required_unless_present = "spec")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub style: Option<Style>,
    /// TOML generator spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// JSONL corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// sentiment, nli, cos_e, multirc or custom:ID:SEG,..[:LABEL,..]
    #[arg(long)]
    pub task: String,
    /// Emit label-only pairs for every example.
    #[arg(long, conflicts_with = "keep")]
    pub no_explanations: bool,
    /// Keep explanations on N randomly chosen annotated examples.
    #[arg(long, requires = "seed")]
    pub keep: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "jsonl")]
    pub format: PairFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// TOML mixture file; corpus paths are relative to it.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "jsonl")]
    pub format: PairFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Formatted pairs (.jsonl or .tsv).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Pair format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<PairFormat>,
    /// TOML training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub max_input_len: Option<usize>,
    #[arg(long)]
    pub max_target_len: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long, conflicts_with = "clip_norm")]
    pub no_clip: bool,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Model checkpoint written by `wt5 train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Plain text, one model input per line.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub inputs: Option<PathBuf>,
    /// JSONL corpus; inputs are formatted from it and keyed by example id.
    #[arg(long, requires = "task")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// Format corpus inputs without the explain prefix.
    #[arg(long, requires = "corpus")]
    pub no_explain: bool,
    /// Beam width; greedy decoding when omitted.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub beam: Option<u64>,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSONL with `id` and `output` fields, as written by `wt5 decode`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold JSONL corpus.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub case_insensitive: bool,
    /// Score BLEU against the best of several references instead of the first.
    #[arg(long)]
    pub multi_ref_max: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Where session event logs live; existing logs are replayed on start.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Static rating UI; a placeholder page is served when omitted.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// JSONL rating items to open a session with at startup.
    #[arg(long, requires = "seed")]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}
