//! Command-line pipeline: corpus generation, preprocessing, training,
//! transfer, fine-tuning, interpolation and evaluation.

mod commands;
mod config;
mod store;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use config::{PathsConfig, PreprocessConfig, RunConfig};
pub use store::{load_corpus_dir, read_stamp, LoadedCorpus, Stamp};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<idtransfer::Error> for CliError {
    fn from(e: idtransfer::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "idtransfer",
    version,
    about = "Identity transfer between registered human meshes"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Directory holding every artifact of the run.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus into OUT/corpus.
    GenData,
    /// Build the mesh hierarchy and rigidly align the corpus.
    Preprocess,
    /// Train and write OUT/checkpoint.bin and OUT/train_log.txt.
    Train,
    /// Transfer the target's identity onto the source pose.
    Infer(TransferArgs),
    /// Transfer, then adapt the weights to this pair.
    Finetune {
        #[command(flatten)]
        transfer: TransferArgs,
        /// Overrides the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Decode blends of two identity codes on one source pose.
    Interpolate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target_a: PathBuf,
        #[arg(long)]
        target_b: PathBuf,
        /// Number of meshes, endpoints included.
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
    /// Score the held-out transfers listed by gen-data.
    Eval {
        /// Skip test-time fine-tuning.
        #[arg(long)]
        no_finetune: bool,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Output mesh; defaults to a file inside OUT.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
