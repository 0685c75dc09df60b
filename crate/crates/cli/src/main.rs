//! `llmrank`: ingest, split, featurize, train, evaluate, route and sweep.
//!
//! Exit status is 0 on success, 1 on invalid input or configuration and 2 on
//! I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::parse_lambda;

#[derive(Debug, Parser)]
#[command(name = "llmrank", version, about = "Cost-aware prompt-to-model routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a keyword-routed synthetic corpus with five cost tiers.
    Synth(SynthArgs),
    /// Validate raw JSONL records, write the clean dataset and a `.rejects` file.
    Ingest(IngestArgs),
    /// Stratified train/val/test split into a directory.
    Split(SplitArgs),
    /// Fit the proxy classifier on the training split and extract features for every split.
    Featurize(FeaturizeArgs),
    /// Train a ranker on a split directory.
    Train(TrainArgs),
    /// Score a trained model, a fixed policy or a decisions file on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Route prompts read from a file or standard input, one JSON decision per line.
    Route(RouteArgs),
    /// Train one router per lambda and write the cost-quality frontier.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL; `pool.json` is written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model pool JSON (defaults to pool.json beside --data).
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep every valid record instead of applying the language, unsolved and category-size filters.
    #[arg(long)]
    no_filter: bool,
    #[arg(long, default_value_t = 50)]
    min_category_samples: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stratify {
    Benchmark,
    Language,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    stratify: Option<Stratify>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    /// Split directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (defaults to the split directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    proxy_hash_dim: usize,
    #[arg(long, default_value_t = 50)]
    proxy_epochs: usize,
    /// Leave out the proxy classifier block.
    #[arg(long)]
    no_proxy: bool,
}

/// Embedding source: a precomputed file, or signed hashing of the prompt text.
#[derive(Debug, Clone, Args)]
struct EmbeddingArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    hash_dim: Option<usize>,
}

/// Training hyperparameters; each flag overrides the config file.
#[derive(Debug, Clone, Args)]
struct HyperArgs {
    /// Cost weight: a number (scientific notation allowed) or perf, balanced, cost.
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Split directory produced by `split` (and optionally `featurize`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Oracle,
    BestSingle,
    Cheapest,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Labelled JSONL, or a split directory (its test.jsonl is used).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Trained model directory.
    #[arg(long, conflicts_with_all = ["policy", "decisions"])]
    model: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "decisions")]
    policy: Option<Policy>,
    /// JSONL of {"sample_id", "chosen_index"} decisions.
    #[arg(long)]
    decisions: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// Lambda for the utility column (defaults to the model's training lambda, else 0).
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write realized decisions as JSONL here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RouteArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input file; standard input when omitted. Lines are JSON objects with a
    /// `prompt` (and optional `sample_id`) or raw prompt text.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// Attach per-group attributions to each decision.
    #[arg(long)]
    explain: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated lambdas (default 0,1e3,1e5).
    #[arg(long)]
    lambdas: Option<String>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<llmrank::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn init_threads() {
    if let Some(n) = std::env::var("LLMRANK_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_threads();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
