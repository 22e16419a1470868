mod config;
mod render;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use weakloc::corpus::{build_dataset, read_jsonl, write_jsonl, BugMix, DatasetConfig, LabeledExample};
use weakloc::eval::{evaluate, EvalOptions};
use weakloc::fix::{fix_pipeline, FixReport};
use weakloc::localize::{localize, rank_heads, select_top_k_heads, HeadMode, HeadProfile, LocalizeOptions};
use weakloc::model::{
    pretrain_mlm, read_checkpoint, train, write_checkpoint, DetectionSample, MlmConfig, ModelConfig, Parameters,
    TrainConfig,
};
use weakloc::tokenizer::{train_bpe, BpeVocabulary, DEFAULT_MERGES};

#[derive(Parser, Debug)]
#[command(name = "weakloc", version, about = "Weakly supervised bug detection and localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Generate train/valid/test JSONL splits and a manifest.
    #[command(args_override_self = true)]
    GenCorpus(GenCorpusArgs),
    /// Learn a BPE vocabulary from a JSONL split.
    #[command(args_override_self = true)]
    TrainBpe(TrainBpeArgs),
    /// Train the bug detector from binary labels.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Masked-LM pretraining on the clean examples of a split.
    #[command(args_override_self = true)]
    PretrainMlm(PretrainArgs),
    /// Detection, localization and per-head metrics on a split.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Localize the bug in one input and render a heatmap.
    #[command(args_override_self = true)]
    Localize(LocalizeArgs),
    /// Profile every attention head's localization accuracy.
    #[command(args_override_self = true)]
    Heads(HeadsArgs),
    /// Localize, then propose replacement tokens for the located span.
    #[command(args_override_self = true)]
    Fix(FixArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenCorpusArgs {
    /// Output directory for train.jsonl, valid.jsonl, test.jsonl and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8000)]
    train: usize,
    #[arg(long, default_value_t = 1000)]
    valid: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
    /// `bound`, `biop`, `varmisuse`, `all`, or weights such as `bound=2,biop=1`.
    #[arg(long, default_value = "bound")]
    mix: String,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainBpeArgs {
    /// JSONL split whose token lists form the BPE corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MERGES)]
    merges: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    ff_dim: usize,
    #[arg(long, default_value_t = 192)]
    max_len: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Seed for parameter initialization.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

impl ModelArgs {
    fn config(&self, vocab: &BpeVocabulary) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            ff_dim: self.ff_dim,
            max_len: self.max_len,
            dropout: self.dropout,
            ..ModelConfig::for_vocab(vocab)
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint (for example an MLM-pretrained one)
    /// instead of a fresh initialization; model flags are then ignored.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 6)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct PretrainArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// JSONL split; only its clean examples are used.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 6)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.15)]
    mask_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct ModelFiles {
    /// Checkpoint JSON.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary the checkpoint was trained against.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct LocArgs {
    /// Window size N in tokens.
    #[arg(long, default_value_t = 1)]
    window: usize,
    /// `average`, `single:I`, `subset:I,J,..` or `top:K` (needs --head-profile).
    #[arg(long, default_value = "average")]
    head_mode: String,
    /// Output of the `heads` command, used to resolve `top:K`.
    #[arg(long)]
    head_profile: Option<PathBuf>,
}

impl LocArgs {
    fn resolve(&self) -> Result<HeadMode> {
        let mode: HeadMode = self.head_mode.parse()?;
        let profile = match &self.head_profile {
            Some(p) => Some(read_json::<HeadsFile>(p)?.profile),
            None => None,
        };
        Ok(mode.resolve(profile.as_ref())?)
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    files: ModelFiles,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    loc: LocArgs,
    /// Comma-separated K values for top-K accuracy.
    #[arg(long, default_value = "1,3,5,10", value_delimiter = ',')]
    ks: Vec<usize>,
    /// Seed for sampling the per-head table.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_head_table: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Render {
    Json,
    Ansi,
    Html,
}

#[derive(Args, Debug, Serialize)]
struct LocalizeArgs {
    #[command(flatten)]
    files: ModelFiles,
    /// Whitespace-separated tokens, one source line per text line, or a JSON
    /// object with `tokens` (and optionally `lines`).
    #[arg(long)]
    input: PathBuf,
    /// Where the result JSON goes.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    loc: LocArgs,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    #[arg(long, value_enum, default_value_t = Render::Json)]
    render: Render,
    /// File for the ansi/html rendering; stdout when absent.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct HeadsArgs {
    #[command(flatten)]
    files: ModelFiles,
    /// Validation JSONL with bug spans.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    window: usize,
    #[arg(long, default_value_t = weakloc::localize::DEFAULT_SAMPLE_CAP)]
    sample_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of best heads to record as the selection.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct FixArgs {
    #[command(flatten)]
    files: ModelFiles,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    loc: LocArgs,
    /// Number of candidates.
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadsFile {
    profile: HeadProfile,
    k: usize,
    selected: Vec<usize>,
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_vocab(path: &Path) -> Result<BpeVocabulary> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BpeVocabulary::read(BufReader::new(f)).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn read_model(path: &Path, vocab: &BpeVocabulary) -> Result<Parameters> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let ck = read_checkpoint(BufReader::new(f), Some(&vocab.hash()))
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.params)
}

fn load(files: &ModelFiles) -> Result<(BpeVocabulary, Parameters)> {
    let vocab = read_vocab(&files.vocab)?;
    let params = read_model(&files.model, &vocab)?;
    Ok((vocab, params))
}

fn save_model(path: &Path, params: &Parameters, vocab: &BpeVocabulary) -> Result<()> {
    let mut w = create(path)?;
    write_checkpoint(&mut w, params, &vocab.hash())?;
    w.flush()?;
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Logs the resolved configuration to stderr and next to the output.
fn log_run<T: Serialize>(out: &Path, run: &T) -> Result<()> {
    eprintln!("resolved config: {}", serde_json::to_string(run)?);
    write_json(&sidecar(out), run)
}

/// Tokens plus a line index per token.
fn read_input(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let tokens: Vec<String> = serde_json::from_value(v["tokens"].clone()).context("input JSON needs a `tokens` list")?;
        let lines: Vec<usize> = match v.get("lines") {
            Some(l) if !l.is_null() => serde_json::from_value(l.clone()).context("`lines` must be integers")?,
            _ => vec![0; tokens.len()],
        };
        if lines.len() != tokens.len() {
            bail!("`lines` has {} entries for {} tokens", lines.len(), tokens.len());
        }
        return Ok((tokens, lines));
    }
    let mut tokens = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push(tok.to_string());
            lines.push(i);
        }
    }
    if tokens.is_empty() {
        bail!("{} contains no tokens", path.display());
    }
    Ok((tokens, lines))
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let names = ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"];
    for n in names {
        guard(&a.out.join(n), a.force)?;
    }
    let config = DatasetConfig {
        train: a.train,
        valid: a.valid,
        test: a.test,
        mix: BugMix::parse(&a.mix)?,
        seed: a.seed,
        ..DatasetConfig::default()
    };
    eprintln!("resolved config: {}", serde_json::to_string(&config)?);
    let splits = build_dataset(&config)?;
    for (name, split) in [("train.jsonl", &splits.train), ("valid.jsonl", &splits.valid), ("test.jsonl", &splits.test)] {
        let mut w = create(&a.out.join(name))?;
        write_jsonl(&mut w, split)?;
    }
    write_json(&a.out.join("manifest.json"), &splits.manifest(&config))?;
    eprintln!("wrote {} / {} / {} examples to {}", a.train, a.valid, a.test, a.out.display());
    Ok(())
}

fn train_bpe_cmd(a: &TrainBpeArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    log_run(&a.out, a)?;
    let examples = read_examples(&a.corpus)?;
    let corpus: Vec<Vec<String>> = examples.into_iter().map(|e| e.tokens).collect();
    let vocab = train_bpe(&corpus, a.merges)?;
    let mut w = create(&a.out)?;
    vocab.write(&mut w)?;
    w.flush()?;
    eprintln!("vocabulary of {} entries ({} merges), hash {}", vocab.len(), vocab.merges().len(), vocab.hash());
    Ok(())
}

fn initial_params(init: Option<&Path>, model: &ModelArgs, vocab: &BpeVocabulary) -> Result<Parameters> {
    match init {
        Some(p) => read_model(p, vocab),
        None => Ok(Parameters::init(&model.config(vocab), model.init_seed)?),
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    guard(&sidecar(&a.out), a.force)?;
    let vocab = read_vocab(&a.vocab)?;
    let init = initial_params(a.init.as_deref(), &a.model, &vocab)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        warmup_steps: a.warmup_steps,
        clip_norm: a.clip_norm,
        seed: a.seed,
    };
    eprintln!("resolved config: {}", json!({"args": a, "model": init.config, "train": cfg}));
    let train_set = DetectionSample::from_examples(&vocab, &read_examples(&a.train)?)?;
    let valid_set = DetectionSample::from_examples(&vocab, &read_examples(&a.valid)?)?;
    let (params, history) = train(init, &train_set, &valid_set, &cfg, |s| {
        eprintln!("epoch {}: train loss {:.4}, valid accuracy {:.4}", s.epoch, s.train_loss, s.valid_accuracy);
    })?;
    save_model(&a.out, &params, &vocab)?;
    write_json(&sidecar(&a.out), &json!({"args": a, "model": params.config, "train": cfg, "history": history}))?;
    eprintln!("best epoch {} (valid accuracy {:.4})", history.best_epoch, history.best_valid_accuracy);
    Ok(())
}

fn pretrain_cmd(a: &PretrainArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    guard(&sidecar(&a.out), a.force)?;
    let vocab = read_vocab(&a.vocab)?;
    let init = initial_params(a.init.as_deref(), &a.model, &vocab)?;
    let cfg = MlmConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        mask_prob: a.mask_prob,
        clip_norm: a.clip_norm,
        seed: a.seed,
    };
    eprintln!("resolved config: {}", json!({"args": a, "model": init.config, "mlm": cfg}));
    let corpus = read_examples(&a.corpus)?
        .iter()
        .filter(|e| !e.is_buggy())
        .map(|e| vocab.encode(&e.tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let (params, losses) = pretrain_mlm(init, &corpus, vocab.specials().mask, &cfg, |epoch, loss| {
        eprintln!("epoch {epoch}: masked-token loss {loss:.4}");
    })?;
    save_model(&a.out, &params, &vocab)?;
    write_json(&sidecar(&a.out), &json!({"args": a, "model": params.config, "mlm": cfg, "losses": losses}))?;
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let (vocab, params) = load(&a.files)?;
    let options = EvalOptions {
        window: a.loc.window,
        head_mode: a.loc.resolve()?,
        ks: a.ks.clone(),
        seed: a.seed,
        head_table: !a.no_head_table,
    };
    eprintln!("resolved config: {}", json!({"args": a, "eval": options}));
    let examples = read_examples(&a.data)?;
    let (report, _) = evaluate(&params, &vocab, &examples, &options)?;
    write_json(&a.out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn localize_cmd(a: &LocalizeArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    if let Some(h) = &a.heatmap {
        guard(h, a.force)?;
    }
    let (vocab, params) = load(&a.files)?;
    let options = LocalizeOptions { window: a.loc.window, head_mode: a.loc.resolve()?, top_k: a.top_k };
    eprintln!("resolved config: {}", json!({"args": a, "localize": options}));
    let (tokens, lines) = read_input(&a.input)?;
    let result = localize(&params, &vocab, &tokens, Some(&lines), &options)?;
    write_json(&a.out, &result)?;
    let rendered = match a.render {
        Render::Json => serde_json::to_string_pretty(&result)? + "\n",
        Render::Ansi => render::ansi(&tokens, &lines, &result),
        Render::Html => render::html(&tokens, &lines, &result),
    };
    match &a.heatmap {
        Some(h) => {
            let mut w = create(h)?;
            w.write_all(rendered.as_bytes())?;
            w.flush()?;
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn heads_cmd(a: &HeadsArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let (vocab, params) = load(&a.files)?;
    eprintln!("resolved config: {}", json!({ "args": a }));
    let examples = read_examples(&a.data)?;
    let profile = rank_heads(&params, &vocab, &examples, a.window, a.sample_cap, a.seed)?;
    let selected = select_top_k_heads(&profile, a.k)?;
    for &h in &profile.ranking {
        println!("head {h:<3} {:.4}", profile.accuracies[h]);
    }
    println!("selected (k = {}): {:?} over {} examples", a.k, selected, profile.sample_size);
    write_json(&a.out, &HeadsFile { profile, k: a.k, selected })?;
    Ok(())
}

fn fix_cmd(a: &FixArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let (vocab, params) = load(&a.files)?;
    let options = LocalizeOptions { window: a.loc.window, head_mode: a.loc.resolve()?, top_k: 1 };
    eprintln!("resolved config: {}", json!({"args": a, "localize": options}));
    let (tokens, _) = read_input(&a.input)?;
    let (result, candidates) = fix_pipeline(&params, &vocab, &tokens, &options, a.m)?;
    let report = FixReport::new(&result, candidates);
    write_json(&a.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainBpe(a) => train_bpe_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::PretrainMlm(a) => pretrain_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Heads(a) => heads_cmd(a),
        Command::Fix(a) => fix_cmd(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand_config_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
