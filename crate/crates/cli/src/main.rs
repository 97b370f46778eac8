//! `pct`: data generation, training, inference and evaluation of
//! compositional pose tokens.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pct_core::Error;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "pct", version, about = "Compositional pose tokens at desk scale")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON run config; unset keys keep their defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed [default: config `seed`, 0]
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: config `out`, "runs"]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dotted config override such as tokenizer.num_tokens=16 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Token classification decoded by the tokenizer
    Tokens,
    /// Direct coordinate regression
    Regression,
    /// Per-axis discrete bins
    Bins,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArg {
    /// Dataset written by gen-data [default: generate from the config and seed]
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset as data.jsonl
    GenData {
        /// Training poses [default: config data.n_train]
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the tokenizer on the training split
    TrainTokenizer {
        #[command(flatten)]
        data: DataArg,
    },
    /// Train a Stage-II head on the training split
    TrainEstimator {
        #[command(flatten)]
        data: DataArg,
        /// Tokenizer checkpoint, required for the token head
        #[arg(long, value_name = "PATH")]
        tokenizer: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = HeadKind::Tokens)]
        kind: HeadKind,
    },
    /// Tokenize every pose of a split into tokens.jsonl
    Encode {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_name = "PATH")]
        tokenizer: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Decode token sequences into decoded.jsonl
    Decode {
        #[arg(long, value_name = "PATH")]
        tokenizer: PathBuf,
        /// File of JSON index arrays, one sequence per line
        #[arg(long, value_name = "PATH")]
        tokens: PathBuf,
    },
    /// Predict poses from benchmark observations into predictions.jsonl
    Predict {
        #[command(flatten)]
        data: DataArg,
        /// Stage-II checkpoint of any kind
        #[arg(long, value_name = "PATH")]
        estimator: PathBuf,
        /// Tokenizer checkpoint, required for the token head
        #[arg(long, value_name = "PATH")]
        tokenizer: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Share of joints hidden in each observation
        #[arg(long, default_value_t = 0.0)]
        mask_rate: f64,
    },
    /// Score checkpoints or prediction files into metrics.json
    Eval {
        #[command(flatten)]
        data: DataArg,
        /// Tokenizer: reconstruction metrics (and the token head's tokenizer)
        #[arg(long, value_name = "PATH")]
        tokenizer: Option<PathBuf>,
        /// Stage-II checkpoint: occlusion benchmark scores
        #[arg(long, value_name = "PATH")]
        estimator: Option<PathBuf>,
        /// Pose records aligned with the split: metrics against ground truth
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Token swap renders and the locality matrix
    AnalyzeTokens {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_name = "PATH")]
        tokenizer: PathBuf,
        /// Rendered swaps per token
        #[arg(long, default_value_t = 4)]
        render: usize,
        /// Swaps per token in the locality matrix [default: config suite.swaps_per_token]
        #[arg(long)]
        swaps: Option<usize>,
    },
    /// Cumulative component ablation over the suite seeds
    Ablate,
    /// Sweep the token count (M) or codebook size (V)
    Sweep {
        /// M or V
        #[arg(long)]
        param: String,
        /// Comma-separated values [default: config suite.token_values or suite.codebook_values]
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainTokenizer { .. } => "train-tokenizer",
            Command::TrainEstimator { .. } => "train-estimator",
            Command::Encode { .. } => "encode",
            Command::Decode { .. } => "decode",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::AnalyzeTokens { .. } => "analyze-tokens",
            Command::Ablate => "ablate",
            Command::Sweep { .. } => "sweep",
        }
    }

    /// Manifest file stem: the command, plus the head kind for baselines so
    /// that every checkpoint keeps its own manifest.
    pub fn manifest_name(&self) -> String {
        match self {
            Command::TrainEstimator { kind: HeadKind::Regression, .. } => "train-estimator-regression".into(),
            Command::TrainEstimator { kind: HeadKind::Bins, .. } => "train-estimator-bins".into(),
            other => other.name().into(),
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::NonFinite(_) => "non_finite",
        Error::Degenerate(_) => "degenerate",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Config(_) => "config",
        Error::Parse { .. } => "parse",
        Error::Schema { .. } => "schema",
        Error::Checkpoint(_) => "checkpoint",
        Error::HashMismatch { .. } => "hash_mismatch",
        Error::NonDeterministic => "non_deterministic",
        Error::Diverged(_) => "diverged",
        Error::EmptyMetric(_) => "empty_metric",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.global, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
