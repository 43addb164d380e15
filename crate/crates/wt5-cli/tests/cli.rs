use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wt5(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wt5"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to run wt5")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = wt5(dir, args);
    assert!(
        out.status.success(),
        "wt5 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(path: impl AsRef<Path>) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

const SENTIMENT: &str = r#"{"id":"m1","segments":{"review":"I went to see this movie with my husband, and we both thought the acting was terrible!"},"label":"negative","explanations":[{"text":"the acting was terrible"}]}
{"id":"m2","segments":{"review":"A quiet film that grows on you."},"label":"positive"}
"#;

const NLI: &str = r#"{"id":"n1","segments":{"premise":"A person on a horse jumps over a broken down airplane.","hypothesis":"A person is training his horse for a competition."},"label":"neutral","explanations":[{"text":"the person is not necessarily training his horse"}]}
"#;

const COSE: &str = r#"{"id":"c1","segments":{"question":"Where can one obtain a bass fiddle?"},"choices":["symphony","music store","tennis court"],"label":"music store","explanations":[{"text":"a bass fiddle is an instrument sold at music stores"}]}
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn prepare_matches_fixture_strings() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "movies.jsonl", SENTIMENT);
    write(d, "esnli.jsonl", NLI);
    write(d, "cose.jsonl", COSE);

    ok(
        d,
        &[
            "prepare",
            "--corpus",
            "movies.jsonl",
            "--task",
            "sentiment",
            "--out",
            "m",
        ],
    );
    assert_eq!(
        lines(d.join("m/pairs.jsonl")),
        [
            r#"{"input":"explain sentiment: I went to see this movie with my husband, and we both thought the acting was terrible!","target":"negative explanation: the acting was terrible"}"#,
            r#"{"input":"sentiment: A quiet film that grows on you.","target":"positive"}"#,
        ]
    );
    ok(
        d,
        &[
            "prepare",
            "--corpus",
            "esnli.jsonl",
            "--task",
            "nli",
            "--format",
            "tsv",
            "--out",
            "n",
        ],
    );
    assert_eq!(
        lines(d.join("n/pairs.tsv")),
        ["explain nli hypothesis: A person is training his horse for a competition. premise: A person on a horse jumps over a broken down airplane.\tneutral explanation: the person is not necessarily training his horse"]
    );
    ok(
        d,
        &["prepare", "--corpus", "cose.jsonl", "--task", "cos_e", "--out", "c"],
    );
    assert_eq!(
        lines(d.join("c/pairs.jsonl")),
        [
            r#"{"input":"explain cos_e question: Where can one obtain a bass fiddle? choice: symphony choice: music store choice: tennis court","target":"music store explanation: a bass fiddle is an instrument sold at music stores"}"#
        ]
    );
    let summary = read_json(d.join("m/summary.json"));
    assert_eq!(summary["pairs"], 2);
    assert_eq!(summary["explained"], 1);
    for f in ["config.json", "summary.json", "metadata.json"] {
        assert!(d.join("m").join(f).exists(), "{f} missing");
    }
}

#[test]
fn no_explanations_drops_every_prefix() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n", "200", "--seed", "4", "--out", "s"]);
    ok(
        d,
        &[
            "prepare",
            "--corpus",
            "s/corpus.jsonl",
            "--task",
            "sentiment",
            "--no-explanations",
            "--out",
            "p",
        ],
    );
    let pairs = lines(d.join("p/pairs.jsonl"));
    assert_eq!(pairs.len(), 200);
    for line in &pairs {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(!v["input"].as_str().unwrap().starts_with("explain "));
        assert!(!v["target"].as_str().unwrap().contains(" explanation: "));
    }
}

#[test]
fn malformed_corpus_line_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "bad.jsonl",
        "{\"id\":\"a\",\"segments\":{\"review\":\"good\"},\"label\":\"positive\"}\n\n{\"id\":\"b\",\n",
    );
    let out = wt5(
        d,
        &["prepare", "--corpus", "bad.jsonl", "--task", "sentiment", "--out", "p"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(!d.join("p").exists(), "no run directory on failure");

    // invalid label on a well-formed line also names the line
    write(
        d,
        "label.jsonl",
        "{\"id\":\"a\",\"segments\":{\"review\":\"good\"},\"label\":\"great\"}\n",
    );
    let out = wt5(
        d,
        &[
            "prepare",
            "--corpus",
            "label.jsonl",
            "--task",
            "sentiment",
            "--out",
            "p",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "movies.jsonl", SENTIMENT);
    assert_eq!(
        wt5(d, &["prepare", "--corpus", "movies.jsonl", "--out", "p"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        wt5(
            d,
            &["prepare", "--corpus", "movies.jsonl", "--task", "bogus", "--out", "p"]
        )
        .status
        .code(),
        Some(1)
    );
    // keep-N needs an explicit seed
    assert_eq!(
        wt5(
            d,
            &[
                "prepare",
                "--corpus",
                "movies.jsonl",
                "--task",
                "sentiment",
                "--keep",
                "1",
                "--out",
                "p"
            ]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(wt5(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(wt5(d, &["--help"]).status.code(), Some(0));
}

fn nli_corpus(n: usize) -> String {
    let labels = ["entailment", "neutral", "contradiction"];
    (0..n)
        .map(|i| {
            format!(
                r#"{{"id":"e{i}","segments":{{"premise":"premise number {i} is here","hypothesis":"hypothesis {i}"}},"label":"{}","explanations":[{{"text":"because of reason number {i}"}}]}}"#,
                labels[i % 3]
            ) + "\n"
        })
        .collect()
}

fn cose_corpus(n: usize) -> String {
    (0..n)
        .map(|i| {
            format!(
                r#"{{"id":"c{i}","segments":{{"question":"where is thing {i}?"}},"choices":["alpha","beta","gamma"],"label":"beta","explanations":[{{"text":"thing {i} is at beta"}}]}}"#
            ) + "\n"
        })
        .collect()
}

fn mix_config(seed: u64, policy: &str) -> String {
    format!(
        r#"seed = {seed}
shuffle = true

[corpora.esnli]
path = "data/esnli.jsonl"
task = "nli"

[corpora.cose]
path = "data/cose.jsonl"
task = "cos_e"

[[sources]]
corpus = "esnli"
policy = "{policy}"
rewrite = "fixed-nli-choices"

[[sources]]
corpus = "esnli"
policy = "none"
rewrite = "fixed-nli-choices"

[[sources]]
corpus = "cose"
policy = "none"
rewrite = "cose-as-nli"
"#
    )
}

#[test]
fn mix_builds_task_transfer_mixture() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("data")).unwrap();
    write(d, "data/esnli.jsonl", &nli_corpus(120));
    write(d, "data/cose.jsonl", &cose_corpus(30));
    write(d, "keep.toml", &mix_config(7, "keep-100"));
    write(d, "all7.toml", &mix_config(7, "all"));
    write(d, "all8.toml", &mix_config(8, "all"));

    ok(d, &["mix", "--config", "keep.toml", "--out", "keep"]);
    let summary = read_json(d.join("keep/summary.json"));
    assert_eq!(summary["pairs"], 270);
    assert_eq!(summary["explained"], 100);
    let per_source: Vec<(u64, u64)> = summary["sources"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["pairs"].as_u64().unwrap(), s["explained"].as_u64().unwrap()))
        .collect();
    assert_eq!(per_source, [(120, 100), (120, 0), (30, 0)]);
    let mixture = lines(d.join("keep/mixture.jsonl"));
    assert_eq!(mixture.len(), 270);
    let explained = mixture.iter().filter(|l| l.contains(r#""input":"explain "#)).count();
    assert_eq!(explained, 100);
    // everything is phrased as NLI after the rewrites
    for line in &mixture {
        let v: Value = serde_json::from_str(line).unwrap();
        let input = v["input"].as_str().unwrap();
        assert!(
            input.starts_with("nli ") || input.starts_with("explain nli "),
            "{input}"
        );
    }

    // another seed only permutes the pairs
    ok(d, &["mix", "--config", "all7.toml", "--out", "a7"]);
    ok(d, &["mix", "--config", "all8.toml", "--out", "a8"]);
    let (a7, a8) = (lines(d.join("a7/mixture.jsonl")), lines(d.join("a8/mixture.jsonl")));
    assert_ne!(a7, a8);
    let (mut s7, mut s8) = (a7.clone(), a8.clone());
    s7.sort();
    s8.sort();
    assert_eq!(s7, s8);
}

/// Files in a run directory except the timestamped metadata.
fn run_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "metadata.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn tiny_pipeline(d: &Path) {
    ok(d, &["synth", "--n", "120", "--seed", "11", "--out", "synth"]);
    ok(
        d,
        &[
            "prepare",
            "--corpus",
            "synth/corpus.jsonl",
            "--task",
            "sentiment",
            "--keep",
            "60",
            "--seed",
            "2",
            "--out",
            "prep",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--pairs",
            "prep/pairs.jsonl",
            "--seed",
            "5",
            "--steps",
            "40",
            "--d-model",
            "8",
            "--batch-size",
            "8",
            "--quiet",
            "--out",
            "train",
        ],
    );
}

#[test]
fn runs_are_reproducible_outside_metadata() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    tiny_pipeline(a.path());
    tiny_pipeline(b.path());
    for stage in ["synth", "prep", "train"] {
        let fa = run_files(&a.path().join(stage));
        let fb = run_files(&b.path().join(stage));
        assert!(fa.len() >= 3, "{stage}: {:?}", fa.keys());
        assert!(fa == fb, "{stage} differs");
    }
    let meta = read_json(a.path().join("train/metadata.json"));
    assert!(meta["started_unix_ms"].as_u64().is_some());
    let config = read_json(a.path().join("train/config.json"));
    assert_eq!(config["steps"], 40);
    assert_eq!(config["seed"], 5);
    assert_eq!(config["clip_norm"], 1.0);
}

#[test]
fn beam_one_equals_greedy_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_pipeline(d);
    let inputs = "explain sentiment: movie superb plot ending\nsentiment: film awful cast scene\nsentiment: ?\nexplain sentiment: unseen words here\nsentiment: story\n";
    write(d, "inputs.txt", inputs);
    ok(
        d,
        &[
            "decode",
            "--model",
            "train/model.bin",
            "--inputs",
            "inputs.txt",
            "--out",
            "greedy",
        ],
    );
    ok(
        d,
        &[
            "decode",
            "--model",
            "train/model.bin",
            "--inputs",
            "inputs.txt",
            "--beam",
            "1",
            "--out",
            "beam1",
        ],
    );
    ok(
        d,
        &[
            "decode",
            "--model",
            "train/model.bin",
            "--inputs",
            "inputs.txt",
            "--beam",
            "4",
            "--out",
            "beam4",
        ],
    );
    let greedy = fs::read(d.join("greedy/predictions.jsonl")).unwrap();
    assert_eq!(greedy, fs::read(d.join("beam1/predictions.jsonl")).unwrap());
    for run in ["greedy", "beam4"] {
        let out = lines(d.join(run).join("predictions.jsonl"));
        assert_eq!(
            out.len(),
            inputs.lines().count(),
            "{run}: one output line per input line"
        );
        let ids: Vec<String> = out
            .iter()
            .map(|l| {
                serde_json::from_str::<Value>(l).unwrap()["id"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(ids, ["1", "2", "3", "4", "5"]);
    }

    // corpus mode keys predictions by example id
    ok(
        d,
        &[
            "decode",
            "--model",
            "train/model.bin",
            "--corpus",
            "synth/corpus.jsonl",
            "--task",
            "sentiment",
            "--out",
            "corpus",
        ],
    );
    let out = lines(d.join("corpus/predictions.jsonl"));
    assert_eq!(out.len(), 120);
    assert!(out[0].starts_with(r#"{"id":"synth-000","#));

    // a blank line has nothing to encode; the error names it
    write(d, "blank.txt", "sentiment: fine\n\nsentiment: ok\n");
    let out = wt5(
        d,
        &[
            "decode",
            "--model",
            "train/model.bin",
            "--inputs",
            "blank.txt",
            "--out",
            "z",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`2`"), "{}", stderr(&out));

    // a missing checkpoint is a data error
    assert_eq!(
        wt5(
            d,
            &["decode", "--model", "nope.bin", "--inputs", "inputs.txt", "--out", "z"]
        )
        .status
        .code(),
        Some(2)
    );
}

const GOLD: &str = r#"{"id":"g1","segments":{"review":"the plot was clever and the cast was superb"},"label":"positive","explanations":[{"text":"the cast was superb overall"}]}
{"id":"g2","segments":{"review":"it dragged on and the ending made no sense at all"},"label":"negative","explanations":[{"text":"the ending made no sense"}]}
{"id":"g3","segments":{"review":"a b c d e f"},"label":"positive","explanations":[{"segment":"review","start":0,"end":5}]}
"#;

fn prediction_lines(outputs: &[(&str, &str)]) -> String {
    outputs
        .iter()
        .map(|(id, output)| serde_json::json!({ "id": id, "output": output }).to_string() + "\n")
        .collect()
}

#[test]
fn score_gold_against_itself() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "gold.jsonl", GOLD);
    write(
        d,
        "pred.jsonl",
        &prediction_lines(&[
            ("g3", "positive explanation: a b c"),
            ("g1", "positive explanation: the cast was superb overall"),
            ("g2", "negative explanation: the ending made no sense"),
        ]),
    );
    let out = ok(
        d,
        &[
            "score",
            "--predictions",
            "pred.jsonl",
            "--gold",
            "gold.jsonl",
            "--task",
            "sentiment",
            "--out",
            "s",
        ],
    );
    let report = read_json(d.join("s/report.json"));
    assert_eq!(report["accuracy"], 1.0);
    // the reference scorer's exp(mean(ln 100)) is 100 + 4e-14 in f64
    assert!(
        (report["bleu"].as_f64().unwrap() - 100.0).abs() < 1e-9,
        "{}",
        report["bleu"]
    );
    assert_eq!(report["token_f1"], 1.0);
    assert_eq!(report["f1a"], Value::Null);
    assert_eq!(report["n_examples"], 3);
    let table = String::from_utf8(out.stdout).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Acc", "BLEU", "TF1", "F1a"]);
    assert_eq!(fs::read_to_string(d.join("s/report.txt")).unwrap(), table);
}

#[test]
fn score_token_f1_four_sevenths() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "gold.jsonl", GOLD.lines().nth(2).unwrap());
    // gold {a b c}, predicted {b c d e}: tp 2, fp 2, fn 1
    write(
        d,
        "pred.jsonl",
        &prediction_lines(&[("g3", "positive explanation: b c d e")]),
    );
    ok(
        d,
        &[
            "score",
            "--predictions",
            "pred.jsonl",
            "--gold",
            "gold.jsonl",
            "--task",
            "sentiment",
            "--out",
            "s",
        ],
    );
    let report = read_json(d.join("s/report.json"));
    assert_eq!(report["token_f1"].as_f64().unwrap(), 4.0 / 7.0);
    assert_eq!(report["accuracy"], 1.0);
}

#[test]
fn score_names_the_missing_prediction() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "gold.jsonl", GOLD);
    write(
        d,
        "pred.jsonl",
        &prediction_lines(&[("g1", "positive"), ("g3", "positive")]),
    );
    let out = wt5(
        d,
        &[
            "score",
            "--predictions",
            "pred.jsonl",
            "--gold",
            "gold.jsonl",
            "--task",
            "sentiment",
            "--out",
            "s",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("g2"), "{}", stderr(&out));

    write(
        d,
        "dup.jsonl",
        &prediction_lines(&[("g1", "positive"), ("g1", "negative")]),
    );
    let out = wt5(
        d,
        &[
            "score",
            "--predictions",
            "dup.jsonl",
            "--gold",
            "gold.jsonl",
            "--task",
            "sentiment",
            "--out",
            "s",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn inputs_are_not_modified() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "movies.jsonl", SENTIMENT);
    let before = fs::read(d.join("movies.jsonl")).unwrap();
    ok(
        d,
        &[
            "prepare",
            "--corpus",
            "movies.jsonl",
            "--task",
            "sentiment",
            "--out",
            "p",
        ],
    );
    assert_eq!(fs::read(d.join("movies.jsonl")).unwrap(), before);
}
