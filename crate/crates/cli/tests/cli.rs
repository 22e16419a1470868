use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn weakloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakloc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = weakloc(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Tiny corpus, vocabulary and one-epoch model shared by most tests.
struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let corpus = p(&dir, "data");
        ok(&["gen-corpus", "--out", &corpus, "--seed", "3", "--train", "60", "--valid", "20", "--test", "20"]);
        ok(&["train-bpe", "--corpus", &format!("{corpus}/train.jsonl"), "--merges", "60", "--out", &p(&dir, "vocab.json")]);
        let cfg = dir.path().join("model.cfg");
        fs::write(&cfg, "layers = 1\nheads = 2\ndim = 8\nff_dim = 16\nmax_len = 512\nepochs = 1\nbatch_size = 16\n").unwrap();
        ok(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--vocab",
            &p(&dir, "vocab.json"),
            "--train",
            &format!("{corpus}/train.jsonl"),
            "--valid",
            &format!("{corpus}/valid.jsonl"),
            "--out",
            &p(&dir, "model.json"),
        ]);
        Pipeline { dir }
    }

    fn path(&self, name: &str) -> String {
        p(&self.dir, name)
    }

    fn data(&self, split: &str) -> String {
        format!("{}/{split}.jsonl", self.path("data"))
    }

    fn model_args(&self) -> Vec<String> {
        vec!["--model".into(), self.path("model.json"), "--vocab".into(), self.path("vocab.json")]
    }
}

fn with<'a>(base: &'a [&'a str], extra: &'a [String]) -> Vec<&'a str> {
    base.iter().copied().chain(extra.iter().map(String::as_str)).collect()
}

#[test]
fn gen_corpus_is_reproducible_and_guarded() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a"), p(&dir, "b"));
    for out in [&a, &b] {
        ok(&["gen-corpus", "--out", out, "--seed", "7", "--train", "30", "--valid", "10", "--test", "10", "--mix", "bound"]);
    }
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(fs::read(PathBuf::from(&a).join(f)).unwrap(), fs::read(PathBuf::from(&b).join(f)).unwrap());
    }
    let again = weakloc(&["gen-corpus", "--out", &a, "--train", "30", "--valid", "10", "--test", "10"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["gen-corpus", "--out", &a, "--train", "30", "--valid", "10", "--test", "10", "--force"]);
}

#[test]
fn gen_corpus_without_out_is_a_usage_error() {
    let out = weakloc(&["gen-corpus", "--seed", "7"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn end_to_end_commands() {
    let pl = Pipeline::new();
    let run = json(Path::new(&format!("{}.run.json", pl.path("model.json"))));
    assert_eq!(run["train"]["epochs"], 1);
    assert_eq!(run["model"]["dim"], 8);

    let margs = pl.model_args();
    let out = ok(&with(&["eval", "--data", &pl.data("test"), "--out", &pl.path("eval.json")], &margs));
    assert!(out.contains("detection"));
    let report = json(Path::new(&pl.path("eval.json")));
    let c = &report["detection"]["confusion"];
    let total: u64 = ["tp", "fp", "fn", "tn"].iter().map(|k| c[k].as_u64().unwrap()).sum();
    assert_eq!(total, 20);

    // heads --k 1, then eval with top:1 uses exactly that head
    ok(&with(&["heads", "--data", &pl.data("valid"), "--out", &pl.path("heads.json"), "--sample-cap", "50"], &margs));
    let heads = json(Path::new(&pl.path("heads.json")));
    let best = heads["selected"][0].as_u64().unwrap();
    assert_eq!(heads["selected"].as_array().unwrap().len(), 1);
    ok(&with(
        &[
            "eval",
            "--data",
            &pl.data("test"),
            "--out",
            &pl.path("eval_top1.json"),
            "--head-mode",
            "top:1",
            "--head-profile",
            &pl.path("heads.json"),
        ],
        &margs,
    ));
    let top1 = json(Path::new(&pl.path("eval_top1.json")));
    assert_eq!(top1["config"]["head_mode"], format!("subset:{best}"));

    let pre = weakloc(&with(&["eval", "--data", &pl.data("test"), "--out", &pl.path("eval_top1.json")], &margs));
    assert!(!pre.status.success(), "existing report must not be overwritten");
}

#[test]
fn localize_renders_and_fix_reports() {
    let pl = Pipeline::new();
    let margs = pl.model_args();
    let input = pl.path("input.txt");
    fs::write(&input, "fn result ( index , limit ) {\nif ( index <= limit ) {\nlet total = index + 1 ;\n}\nreturn total * 2 ;\n}\n").unwrap();

    ok(&with(&["localize", "--input", &input, "--out", &pl.path("loc.json")], &margs));
    let r = json(Path::new(&pl.path("loc.json")));
    assert!(r["verdict"] == "clean" || r["verdict"] == "buggy");
    assert_eq!(r["p"].as_array().unwrap().len(), 2);
    for key in ["window", "topk", "token_scores", "line_scores"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    let parsed: weakloc::localize::LocalizationResult = serde_json::from_value(r.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), r);
    if r["verdict"] == "clean" {
        assert!(r["window"].is_null());
    }

    let html = pl.path("heat.html");
    ok(&with(&["localize", "--input", &input, "--out", &pl.path("loc2.json"), "--render", "html", "--heatmap", &html], &margs));
    let page = fs::read_to_string(&html).unwrap();
    assert!(page.contains("&lt;="));
    assert!(page.contains(if r["verdict"] == "clean" { "CLEAN" } else { "BUGGY" }));

    let ansi = ok(&with(&["localize", "--input", &input, "--out", &pl.path("loc3.json"), "--render", "ansi"], &margs));
    assert!(ansi.contains("\x1b[48;5;"));

    ok(&with(&["fix", "--input", &input, "--out", &pl.path("fix.json"), "--m", "3"], &margs));
    let f = json(Path::new(&pl.path("fix.json")));
    match f["verdict"].as_str().unwrap() {
        "clean" => assert!(f["candidates"].is_null()),
        _ => assert_eq!(f["candidates"].as_array().unwrap().len(), 3),
    }
}

#[test]
fn mismatched_vocabulary_is_refused() {
    let pl = Pipeline::new();
    let other = pl.path("other_vocab.json");
    ok(&["train-bpe", "--corpus", &pl.data("valid"), "--merges", "5", "--out", &other]);
    let input = pl.path("input.txt");
    fs::write(&input, "fn temp ( index , size ) { return index + size ; }\n").unwrap();
    let out = weakloc(&["localize", "--model", &pl.path("model.json"), "--vocab", &other, "--input", &input, "--out", &pl.path("x.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab_hash mismatch"));
}

#[test]
fn pretrain_then_finetune() {
    let pl = Pipeline::new();
    let mlm = pl.path("mlm.json");
    ok(&[
        "pretrain-mlm",
        "--vocab",
        &pl.path("vocab.json"),
        "--corpus",
        &pl.data("train"),
        "--out",
        &mlm,
        "--layers",
        "1",
        "--heads",
        "2",
        "--dim",
        "8",
        "--ff-dim",
        "16",
        "--max-len",
        "512",
        "--epochs",
        "1",
    ]);
    let run = json(Path::new(&format!("{mlm}.run.json")));
    assert_eq!(run["losses"].as_array().unwrap().len(), 1);
    ok(&[
        "train",
        "--vocab",
        &pl.path("vocab.json"),
        "--train",
        &pl.data("train"),
        "--valid",
        &pl.data("valid"),
        "--init",
        &mlm,
        "--epochs",
        "1",
        "--out",
        &pl.path("finetuned.json"),
    ]);
}
