//! `storejourney` command-line pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use storejourney::nn::ModelError;
use storejourney::training::Packing;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Args(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Args(_) => "bad_arguments",
            CliError::Format(_) => "format",
            CliError::Diverged(_) => "divergence",
            CliError::Checkpoint(_) => "incompatible_checkpoint",
            CliError::Io(_) => "io",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Args(_) => 2,
            CliError::Format(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Io(_) => 1,
        }
    }
}

impl From<storejourney::Error> for CliError {
    fn from(e: storejourney::Error) -> Self {
        use storejourney::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::Simulation(_) | E::Model(ModelError::Config(_)) => CliError::Args(msg),
            E::Format(_) | E::Codec(_) | E::Tokenizer(_) => CliError::Format(msg),
            E::Model(ModelError::NonFiniteGradient { .. }) | E::Diverged { .. } => CliError::Diverged(msg),
            E::IncompatibleCheckpoint(_) | E::Model(ModelError::Shape(_)) => CliError::Checkpoint(msg),
            E::Model(_) => CliError::Format(msg),
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::Args(msg),
            E::Io { .. } => CliError::Io(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "storejourney",
    version,
    about = "Synthesize, train on, generate and evaluate in-store customer journeys"
)]
struct Cli {
    /// Log progress at info level (twice for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON object whose keys mirror this subcommand's flags (underscored); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

macro_rules! settings {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            #[command(flatten)]
            #[serde(skip)]
            pub common: Common,
            $($(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>,)*
        }
    };
}

settings!(SynthArgs {
    /// Store preset: A (61 zones) or B (41 zones).
    preset: String,
    /// Number of journeys.
    n: usize,
    seed: u64,
    /// Output directory for layout, trajectories, scanner and truth files.
    out: PathBuf,
    /// JSON file overriding shopper behavior parameters.
    shopper: PathBuf,
});

settings!(CorpusArgs {
    layout: PathBuf,
    trajectories: PathBuf,
    scanner: PathBuf,
    /// Seeds random in-zone placement and the split.
    seed: u64,
    /// Output directory for corpus.txt and the train/validation/test splits.
    out: PathBuf,
    /// Clustering radius in xyt space, meters.
    eps: f64,
    min_pts: usize,
    /// Seconds between checkout and a scanner transaction still matched to it.
    match_window: f64,
    train_fraction: f64,
    validation_fraction: f64,
    test_fraction: f64,
});

settings!(BpeArgs {
    /// Journey text file, one journey per line.
    corpus: PathBuf,
    vocab_size: usize,
    out: PathBuf,
});

settings!(PretrainArgs {
    tokenizer: PathBuf,
    train: PathBuf,
    validation: PathBuf,
    seed: u64,
    /// Output directory for model.ckpt and run.json.
    out: PathBuf,
    n_layer: usize,
    n_head: usize,
    d_model: usize,
    d_ff: usize,
    ctx_len: usize,
    vocab_size: usize,
    dropout: f64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    /// contiguous (default) or journeys: windows holding whole journeys.
    packing: Packing,
});

settings!(FinetuneArgs {
    checkpoint: PathBuf,
    tokenizer: PathBuf,
    train: PathBuf,
    validation: PathBuf,
    /// Number of leading training journeys used.
    n: usize,
    seed: u64,
    out: PathBuf,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    /// contiguous (default) or journeys: windows holding whole journeys.
    packing: Packing,
});

settings!(GenerateArgs {
    checkpoint: PathBuf,
    tokenizer: PathBuf,
    /// Journey text file supplying prompts.
    prompts: PathBuf,
    /// Samples per prompt (7 = first 30 s).
    k: usize,
    /// Number of generations; prompts are reused cyclically.
    n: usize,
    seed: u64,
    temperature: f64,
    top_k: usize,
    top_p: f64,
    max_new_tokens: usize,
    /// Output JSON-lines file.
    out: PathBuf,
    /// Directory for valid generations as trajectory and scanner CSV (needs --layout).
    export: PathBuf,
    layout: PathBuf,
});

settings!(EvaluateArgs {
    /// Generation records (.jsonl) or journey text.
    generated: PathBuf,
    /// Journey text file, e.g. the test split.
    reference: PathBuf,
    layout: PathBuf,
    /// Seeds heatmap subsampling.
    seed: u64,
    heatmap_sample: usize,
    out: PathBuf,
});

settings!(CurveArgs {
    checkpoint: PathBuf,
    tokenizer: PathBuf,
    train: PathBuf,
    validation: PathBuf,
    /// `LO..HI` (doubling) or a comma list.
    sizes: String,
    /// Comma list of finetune and scratch.
    modes: String,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    /// contiguous (default) or journeys: windows holding whole journeys.
    packing: Packing,
    /// Output CSV with size, mode and losses.
    out: PathBuf,
    /// Test journeys; when given with --layout, fine-tuned models are scored by zone divergence.
    prompts: PathBuf,
    layout: PathBuf,
    generations: usize,
});

#[derive(Subcommand)]
enum Command {
    /// Simulate a store and its shoppers.
    Synth(SynthArgs),
    /// Localize purchases and write journey text with splits.
    BuildCorpus(CorpusArgs),
    /// Learn a byte-level BPE vocabulary.
    TrainBpe(BpeArgs),
    /// Train a model from scratch.
    Pretrain(PretrainArgs),
    /// Continue training a checkpoint on a subset.
    Finetune(FinetuneArgs),
    /// Complete journeys from prompts.
    Generate(GenerateArgs),
    /// Compare generated with reference journeys.
    Evaluate(EvaluateArgs),
    /// Validation loss against training size, with and without a pretrained start.
    LearningCurve(CurveArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&config::resolve(&a, a.common.config.as_deref())?),
        Command::BuildCorpus(a) => commands::build_corpus(&config::resolve(&a, a.common.config.as_deref())?),
        Command::TrainBpe(a) => commands::train_bpe(&config::resolve(&a, a.common.config.as_deref())?),
        Command::Pretrain(a) => commands::pretrain(&config::resolve(&a, a.common.config.as_deref())?),
        Command::Finetune(a) => commands::finetune(&config::resolve(&a, a.common.config.as_deref())?),
        Command::Generate(a) => commands::generate(&config::resolve(&a, a.common.config.as_deref())?),
        Command::Evaluate(a) => commands::evaluate(&config::resolve(&a, a.common.config.as_deref())?),
        Command::LearningCurve(a) => commands::learning_curve(&config::resolve(&a, a.common.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.class(), "message": e.to_string() }));
            ExitCode::from(e.code())
        }
    }
}
