use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use wt5::corpus::{load_examples, write_examples, Example, TaskKind};
use wt5::formatter::{format_input, read_pairs, write_pairs, FormattedPair, PairFormat};
use wt5::metrics::{evaluate, ScoreOptions};
use wt5::mixer::{build_mixture_with_summary, ExplanationPolicy, MixtureConfig, MixtureSource, MixtureSpec};
use wt5::seq2seq::{load_checkpoint, save_checkpoint, train, TrainConfig};
use wt5::synth::{generate, ExplanationStyle, SynthSpec};

use crate::args::{DecodeArgs, MixArgs, PrepareArgs, ScoreArgs, Style, SynthArgs, TrainArgs};
use crate::error::{CliError, Result};
use crate::run_dir::RunDir;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::in_file(path, e))
}

fn parse_task(s: &str) -> Result<TaskKind> {
    s.parse().map_err(CliError::usage)
}

fn load_corpus(path: &Path, task: &TaskKind) -> Result<Vec<Example>> {
    load_examples(path, task).map_err(|e| CliError::in_file(path, e))
}

fn pair_summary(pairs: &[FormattedPair]) -> (usize, usize) {
    (pairs.len(), pairs.iter().filter(|p| p.wants_explanation).count())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => toml::from_str(&read_to_string(path)?).map_err(|e| CliError::in_file(path, e))?,
        None => SynthSpec::with_defaults(1000, 0),
    };
    if let Some(n) = args.n {
        spec.n_examples = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(style) = args.style {
        spec.style = match style {
            Style::Abstractive => ExplanationStyle::Abstractive,
            Style::Extractive => ExplanationStyle::Extractive,
        };
    }
    let examples = generate(&spec).map_err(CliError::usage)?;
    let run = RunDir::create(&args.out, &spec)?;
    run.write_with("corpus.jsonl", |w| write_examples(w, &examples))?;
    let positive = examples.iter().filter(|e| e.label == "positive").count();
    run.finish(
        "synth",
        &json!({
            "examples": examples.len(),
            "positive": positive,
            "negative": examples.len() - positive,
        }),
    )
}

fn write_pair_output(run: &RunDir, stem: &str, pairs: &[FormattedPair], format: PairFormat) -> Result<String> {
    let name = format!("{stem}.{}", format.extension());
    run.write_with(&name, |w| write_pairs(w, pairs, format))?;
    Ok(name)
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    let examples = load_corpus(&args.corpus, &task)?;
    let policy = match (args.no_explanations, args.keep) {
        (true, _) => ExplanationPolicy::None,
        (false, Some(n)) => ExplanationPolicy::Keep(n),
        (false, None) => ExplanationPolicy::All,
    };
    // a single-source, unshuffled mixture; keep-N draws from `seed`
    let spec = MixtureSpec {
        sources: vec![MixtureSource {
            corpus: "corpus".into(),
            policy,
            rewrite: None,
        }],
        seed: args.seed.unwrap_or(0),
        shuffle: false,
    };
    let corpora = HashMap::from([("corpus".to_string(), examples)]);
    let (pairs, _) = build_mixture_with_summary(&spec, &corpora).map_err(CliError::data)?;
    let run = RunDir::create(
        &args.out,
        &json!({
            "corpus": args.corpus,
            "task": args.task,
            "policy": policy,
            "seed": args.seed,
            "format": args.format.extension(),
        }),
    )?;
    let output = write_pair_output(&run, "pairs", &pairs, args.format)?;
    let (n, explained) = pair_summary(&pairs);
    run.finish(
        "prepare",
        &json!({ "output": output, "pairs": n, "explained": explained, "label_only": n - explained }),
    )
}

pub fn mix(args: &MixArgs) -> Result<()> {
    let config =
        MixtureConfig::from_toml_str(&read_to_string(&args.config)?).map_err(|e| CliError::in_file(&args.config, e))?;
    let base = args.config.parent().unwrap_or(Path::new(""));
    let mut corpora = HashMap::new();
    for (name, source) in &config.corpora {
        let task = parse_task(&source.task)?;
        corpora.insert(name.clone(), load_corpus(&base.join(&source.path), &task)?);
    }
    let (pairs, sources) = build_mixture_with_summary(&config.spec(), &corpora).map_err(CliError::data)?;
    let run = RunDir::create(&args.out, &config)?;
    let output = write_pair_output(&run, "mixture", &pairs, args.format)?;
    let (n, explained) = pair_summary(&pairs);
    run.finish(
        "mix",
        &json!({ "output": output, "pairs": n, "explained": explained, "sources": sources }),
    )
}

/// Every training field optional, for layering a config file under flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    steps: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    max_input_len: Option<usize>,
    max_target_len: Option<usize>,
    d_model: Option<usize>,
    min_count: Option<usize>,
    init_scale: Option<f64>,
    clip_norm: Option<f64>,
}

impl TrainOverrides {
    fn apply(self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { c.$f = v; } )*};
        }
        set!(
            steps,
            batch_size,
            lr,
            seed,
            max_input_len,
            max_target_len,
            d_model,
            min_count,
            init_scale
        );
        if self.clip_norm.is_some() {
            c.clip_norm = self.clip_norm;
        }
    }
}

fn pair_format_of(path: &Path, explicit: Option<PairFormat>) -> PairFormat {
    explicit.unwrap_or(match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => PairFormat::Tsv,
        _ => PairFormat::Jsonl,
    })
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    pairs: &'a Path,
    #[serde(flatten)]
    config: &'a TrainConfig,
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let file: TrainOverrides = toml::from_str(&read_to_string(path)?).map_err(|e| CliError::in_file(path, e))?;
        file.apply(&mut config);
    }
    TrainOverrides {
        steps: args.steps,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        max_input_len: args.max_input_len,
        max_target_len: args.max_target_len,
        d_model: args.d_model,
        min_count: args.min_count,
        init_scale: None,
        clip_norm: args.clip_norm,
    }
    .apply(&mut config);
    if args.no_clip {
        config.clip_norm = None;
    }
    config.validate().map_err(CliError::usage)?;

    let format = pair_format_of(&args.pairs, args.format);
    let file = File::open(&args.pairs).map_err(|e| CliError::in_file(&args.pairs, e))?;
    let pairs = read_pairs(BufReader::new(file), format).map_err(|e| CliError::in_file(&args.pairs, e))?;

    let run = RunDir::create(
        &args.out,
        &ResolvedTrain {
            pairs: &args.pairs,
            config: &config,
        },
    )?;
    let quiet = args.quiet;
    let every = (config.steps / 20).max(1);
    let (model, report) = train(&pairs, &config, |step, loss| {
        if !quiet && (step + 1) % every == 0 {
            eprintln!("step {:>6}/{}  loss {loss:.4}", step + 1, config.steps);
        }
    })
    .map_err(CliError::data)?;
    save_checkpoint(&model, run.path("model.bin")).map_err(CliError::internal)?;
    run.write_with("loss.tsv", |w| {
        writeln!(w, "step\tloss")?;
        for (i, loss) in report.losses.iter().enumerate() {
            writeln!(w, "{}\t{loss}", i + 1)?;
        }
        Ok(())
    })?;
    run.finish(
        "train",
        &json!({
            "pairs": pairs.len(),
            "vocab": model.vocab.len(),
            "parameters": model.params.len(),
            "steps": report.losses.len(),
            "final_loss": report.tail_mean(100),
        }),
    )
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    id: String,
    output: String,
}

pub fn decode(args: &DecodeArgs) -> Result<()> {
    let model = load_checkpoint(&args.model).map_err(|e| CliError::in_file(&args.model, e))?;
    let inputs: Vec<(String, String)> = match (&args.inputs, &args.corpus, &args.task) {
        (Some(path), _, _) => read_to_string(path)?
            .lines()
            .enumerate()
            .map(|(i, line)| ((i + 1).to_string(), line.to_string()))
            .collect(),
        (None, Some(path), Some(task)) => load_corpus(path, &parse_task(task)?)?
            .iter()
            .map(|e| (e.id.clone(), format_input(e, !args.no_explain)))
            .collect(),
        _ => return Err(CliError::usage("pass --inputs, or --corpus with --task")),
    };
    let run = RunDir::create(
        &args.out,
        &json!({
            "model": args.model,
            "inputs": args.inputs,
            "corpus": args.corpus,
            "task": args.task,
            "explain": args.corpus.is_some() && !args.no_explain,
            "strategy": if args.beam.is_some() { "beam" } else { "greedy" },
            "beam": args.beam,
            "max_len": args.max_len,
        }),
    )?;
    let mut w = run.writer("predictions.jsonl")?;
    for (id, input) in &inputs {
        let ids = model.vocab.encode(input);
        let out = match args.beam {
            Some(k) => model.beam_decode(&ids, k as usize, args.max_len),
            None => model.greedy_decode(&ids, args.max_len),
        }
        .map_err(|e| CliError::data(format!("input `{id}`: {e}")))?;
        let record = Prediction {
            id: id.clone(),
            output: model.vocab.decode(&out),
        };
        serde_json::to_writer(&mut w, &record)
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"))
            .map_err(CliError::internal)?;
    }
    w.flush().map_err(CliError::internal)?;
    run.finish("decode", &json!({ "predictions": inputs.len() }))
}

fn read_predictions(path: &Path) -> Result<HashMap<String, String>> {
    let file = File::open(path).map_err(|e| CliError::in_file(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::in_file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(&line).map_err(|e| CliError::in_file(path, format!("line {}: {e}", i + 1)))?;
        if out.insert(p.id.clone(), p.output).is_some() {
            return Err(CliError::in_file(
                path,
                format!("line {}: duplicate id `{}`", i + 1, p.id),
            ));
        }
    }
    Ok(out)
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    let gold = load_corpus(&args.gold, &task)?;
    let predictions = read_predictions(&args.predictions)?;
    let options = ScoreOptions {
        case_sensitive: !args.case_insensitive,
        multi_reference_max: args.multi_ref_max,
    };
    let report = evaluate(&gold, &predictions, options).map_err(CliError::data)?;
    let run = RunDir::create(
        &args.out,
        &json!({
            "predictions": args.predictions,
            "gold": args.gold,
            "task": args.task,
            "case_sensitive": options.case_sensitive,
            "multi_reference_max": options.multi_reference_max,
        }),
    )?;
    run.write_json("report.json", &report)?;
    run.write_with("report.txt", |w| writeln!(w, "{report}"))?;
    println!("{report}");
    run.finish("score", &report)
}

/// Reads rating items (JSONL) and splits them into real items and checks.
pub fn read_rating_items(path: &Path) -> Result<Vec<wt5::rating::RatingItem>> {
    let text = read_to_string(path)?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line).map_err(|e| CliError::in_file(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(items)
}
