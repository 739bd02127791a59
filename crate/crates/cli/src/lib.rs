//! Command-line driver: argument parsing, run configuration and the commands
//! that chain corpus preparation, embedding training, CNN training,
//! evaluation, ablation, benchmarking and classification.

pub mod commands;
pub mod config;

use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lexcite::cnn::EmbeddingInit;
use lexcite::textprep::PrepMode;

use config::{ClassWeighting, Overrides, RunConfig, DATA_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "lexcite", version, about = "Citation-treatment classification for case-law text")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; unset fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for splitting, embedding training, model initialisation and noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory of the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Prepared-data directory [default: $LEXCITE_DATA_DIR, then ./data].
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Comma-separated convolution kernel sizes, e.g. 2,3,5.
    #[arg(long, global = true, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    /// Embedding layer start: pretrained or random
    #[arg(long, global = true)]
    pub embedding_init: Option<EmbeddingInit>,
    /// Token normalisation: stemmed, lemmatized or raw-filtered.
    #[arg(long, global = true)]
    pub mode: Option<PrepMode>,
    /// Loss weights per class
    #[arg(long, global = true, value_enum)]
    pub class_weights: Option<ClassWeighting>,
    /// Embedding-noise standard deviation for the robustness run.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Timed passes over the bench documents
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Untimed passes before the bench starts
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// Embedding table file.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Model file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Knn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a corpus CSV and cache preprocessed tokens.
    Prepare {
        /// Corpus CSV [default: config paths.corpus, then <data>/corpus.csv].
        corpus: Option<PathBuf>,
    },
    /// Train subword embeddings on the training split.
    TrainEmbeddings,
    /// Train the CNN classifier.
    Train,
    /// Score a model (or the KNN baseline) on the test split.
    Evaluate {
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Train and score one model per kernel configuration.
    Ablate,
    /// Time single-document inference on the test split.
    Bench,
    /// Predict labels for raw documents, one per line or a corpus CSV.
    Classify {
        /// Input file; standard input when absent or `-`.
        input: Option<PathBuf>,
    },
    /// Write a planted-phrase corpus to <out>/corpus.csv.
    MakeSynthetic,
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            data: self.data.clone(),
            kernels: self.kernels.clone(),
            embedding_init: self.embedding_init,
            mode: self.mode,
            class_weights: self.class_weights,
            sigma: self.sigma,
            reps: self.reps,
            warmup: self.warmup,
            embeddings: self.embeddings.clone(),
            model: self.model.clone(),
        }
    }

    /// Config file (if any) with overrides and environment defaults applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        base.resolve(&self.overrides(), std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}

/// Runs one parsed command. `input` backs `classify` when no file is given.
pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let dir = cli.common.out.clone();
    match cli.command {
        Command::Prepare { corpus } => commands::prepare(&cfg, corpus, dir, out),
        Command::TrainEmbeddings => commands::train_embeddings(&cfg, dir, out),
        Command::Train => commands::train(&cfg, dir, out),
        Command::Evaluate { baseline } => commands::evaluate(&cfg, baseline, dir, out),
        Command::Ablate => commands::ablate(&cfg, dir, out),
        Command::Bench => commands::bench(&cfg, dir, out),
        Command::Classify { input: path } => commands::classify(&cfg, path, input, out),
        Command::MakeSynthetic => commands::make_synthetic(&cfg, dir, out),
    }
}
