//! Command-line surface: dataset building, training, evaluation, prediction
//! and gradient checking.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use g2c_core::bio::spans_from_tags;
use g2c_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use g2c_core::dataset::{
    build_dataset, emit_dataset, read_jsonl, read_labels, to_jsonl, BuildConfig, DatasetError,
    MatchConfig, SentenceRecord,
};
use g2c_core::metrics::MetricsReport;
use g2c_core::model::gradcheck::{gradcheck_model, GradcheckConfig};
use g2c_core::model::ModelError;
use g2c_core::train::{evaluate, predict_all, run_training, RunConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
/// The gradient check ran but exceeded its tolerance.
pub const EXIT_CHECK_FAILED: i32 = 3;

pub const SEED_ENV: &str = "G2C_SEED";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const CHECKPOINT_FILE: &str = "model.g2ck";
pub const HISTORY_FILE: &str = "history.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.tsv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "g2c", version, about = "Graph-aware collocation tagger")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match a collocation list against a CoNLL-U corpus and write splits.
    BuildDataset(BuildDatasetArgs),
    /// Train a model; writes the best checkpoint and the epoch history.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled JSONL file.
    Eval(EvalArgs),
    /// Tag unlabelled JSONL records.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Directory searched recursively for .conllu files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Tab-separated list: LF, base lemma, base UPOS, collocate lemma, collocate UPOS.
    #[arg(long)]
    pub collocations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Longest tokenized length kept, counting CLS and SEP.
    #[arg(long, default_value_t = BuildConfig::default().max_len)]
    pub max_len: usize,
    /// Also match a base and collocate joined through an ADP token.
    #[arg(long)]
    pub allow_case_hop: bool,
    /// Write review.tsv listing every emitted occurrence.
    #[arg(long)]
    pub review: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl, dev.jsonl and labels.json.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled JSONL records.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for report.json and confusion.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// Training JSONL whose per-LF instance counts are correlated with per-LF F1.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON gradcheck config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::BuildDataset(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Flag, then `G2C_SEED`, then the fallback.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_file(path, text)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn build(a: BuildDatasetArgs) -> Result<i32, CliError> {
    let config = BuildConfig {
        seed: resolve_seed(a.seed, BuildConfig::default().seed)?,
        max_len: a.max_len,
        matching: MatchConfig {
            allow_case_hop: a.allow_case_hop,
        },
    };
    let built = build_dataset(&a.corpus, &a.collocations, &config)?;
    emit_dataset(&built, &a.out, a.review)?;
    let s = &built.stats;
    println!(
        "sentences: train {} dev {} test {} (read {}, matched {})",
        s.sentences.train, s.sentences.dev, s.sentences.test, s.sentences_read, s.sentences_matched
    );
    for (reason, n) in &s.dropped {
        println!("dropped {reason}: {n}");
    }
    Ok(EXIT_OK)
}

fn train(a: TrainArgs) -> Result<i32, CliError> {
    let mut config: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    config.seed = resolve_seed(a.seed, config.seed)?;
    let train = read_jsonl(&a.data.join("train.jsonl"))?;
    let dev_path = a.data.join("dev.jsonl");
    let dev = if dev_path.exists() {
        read_jsonl(&dev_path)?
    } else {
        Vec::new()
    };
    let labels = read_labels(&a.data.join("labels.json"))?;
    log::info!("training on {} sentences, {} dev", train.len(), dev.len());

    let outcome = run_training(&config, &train, &dev, &labels)?;
    create_dir(&a.out)?;
    let ckpt = Checkpoint::from_state(outcome.config, outcome.vocab, outcome.best);
    save_checkpoint(&ckpt, &a.out.join(CHECKPOINT_FILE))?;
    write_json(&a.out.join(HISTORY_FILE), &outcome.history)?;
    println!(
        "best epoch {} of {}, dev span macro-F1 {}",
        outcome.history.best_epoch,
        outcome.history.epochs.len(),
        outcome
            .history
            .best_dev_span_macro_f1
            .map_or("n/a".to_string(), |f| format!("{f:.4}"))
    );
    Ok(EXIT_OK)
}

/// Per-LF count of annotated instances.
pub fn instance_frequencies(records: &[SentenceRecord]) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    for inst in records.iter().flat_map(|r| &r.instances) {
        *freq.entry(inst.lf.clone()).or_insert(0) += 1;
    }
    freq
}

fn eval(a: EvalArgs) -> Result<i32, CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let records = read_jsonl(&a.data)?;
    let data = ckpt.vocab.encode_all(&records)?;
    let scheme = ckpt.vocab.scheme()?;
    let mut report: MetricsReport = evaluate(&ckpt.model, &data, &scheme)?;
    if let Some(p) = &a.train {
        report = report.with_frequency_correlation(&instance_frequencies(&read_jsonl(p)?));
    }
    create_dir(&a.out)?;
    write_json(&a.out.join(REPORT_FILE), &report)?;
    write_file(&a.out.join(CONFUSION_FILE), report.confusion.to_tsv())?;
    for (name, value) in report.scalars() {
        println!("{name}\t{value:.6}");
    }
    Ok(EXIT_OK)
}

fn predict(a: PredictArgs) -> Result<i32, CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let scheme = ckpt.vocab.scheme()?;
    let mut records = read_jsonl(&a.input)?;
    // gold labels, if any, are replaced
    for r in &mut records {
        r.tags.clear();
        r.sentence_label = None;
        r.instances.clear();
    }
    let data = ckpt.vocab.encode_all(&records)?;
    let preds = predict_all(&ckpt.model, &data)?;
    for (r, p) in records.iter_mut().zip(&preds) {
        r.tags = scheme.names_from_ids(&p.tag_sequence);
        r.sentence_label = Some(ckpt.vocab.lf_labels[p.sentence_label].clone());
        log::debug!(
            "{} spans predicted",
            spans_from_tags(&p.tag_sequence, &scheme).len()
        );
    }
    write_file(&a.output, to_jsonl(&records))?;
    println!("tagged {} sentences", records.len());
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32, CliError> {
    let config: GradcheckConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GradcheckConfig::default(),
    };
    let seed = resolve_seed(a.seed, 0)?;
    let start = std::time::Instant::now();
    let report = gradcheck_model(&config, seed)?;
    let pass = report.max_relative_error <= GRADCHECK_TOLERANCE;
    println!(
        "max relative error {:.3e} over {} parameters in {:.2?}: {}",
        report.max_relative_error,
        report.n_parameters,
        start.elapsed(),
        if pass { "ok" } else { "FAILED" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}
