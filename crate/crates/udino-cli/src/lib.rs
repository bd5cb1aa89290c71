//! `udino` command-line interface.
//!
//! Exit codes: 0 success, 2 config error, 3 data/format error, 4 numeric
//! failure, 5 I/O error.

mod commands;
mod config;

pub use config::RunConfig;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use udino::Error;

#[derive(Debug, Parser)]
#[command(
    name = "udino",
    about = "Self-supervised utterance embeddings: distillation training, clustering, verification scoring, and probing",
    version
)]
pub struct Cli {
    /// Worker threads for the parallel sections (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus (FEAT1 files + manifest.tsv).
    SynthData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output corpus directory.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert a directory of PCM16 mono WAV files into a FEAT1 corpus.
    Featurize {
        #[command(flatten)]
        config: ConfigArg,
        /// Directory scanned (non-recursively) for *.wav files.
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Self-distillation pre-training on an unlabeled corpus.
    /// Speaker columns in the manifest are ignored.
    TrainDino {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Metric log (line-delimited JSON); defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also write intermediate checkpoints every N steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Extract full-utterance embeddings from a checkpoint into an EMB1 file.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Branch for distillation checkpoints (ignored for plain encoders).
        #[arg(long, default_value = "teacher")]
        branch: String,
        /// Additionally write a text export next to `out` (`<out>.tsv`).
        #[arg(long)]
        tsv: bool,
    },
    /// Score a trial list and report EER / minDCF as JSON.
    EvalTrials {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// `cosine` or `plda:<model.ckpt>` (applies the model's stored
        /// preprocessing before scoring).
        #[arg(long, default_value = "cosine")]
        scorer: String,
        /// Write the metrics JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate pseudo speaker labels: embeddings -> k-means -> AHC.
    Cluster {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Output label TSV (`utterance_id<TAB>cluster_index`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "teacher")]
        branch: String,
    },
    /// Supervised AAM-softmax training on (pseudo) labels.
    TrainSupervised {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        /// Label TSV from `cluster` (or oracle labels).
        #[arg(long)]
        labels: PathBuf,
        /// Warm-start checkpoint; omitted = fresh random init.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-covariance PLDA back-end training.
    /// Requires true speaker labels (`id<TAB>speaker` TSV).
    TrainPlda {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Logistic-regression probe with weighted class-F1.
    /// Requires labeled train/test embedding sets.
    Probe {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        train_emb: PathBuf,
        /// `id<TAB>class` TSV for the training set (true labels).
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        test_emb: PathBuf,
        /// `id<TAB>class` TSV for the test set (true labels).
        #[arg(long)]
        test_labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline on synthetic data: train-dino, iterative clustering,
    /// large-margin fine-tuning, and held-out evaluation per stage.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Format(_)
        | Error::Unsupported(_)
        | Error::Shape(_)
        | Error::MissingId(_) => 3,
        Error::Numeric(_) => 4,
        Error::Io { .. } => 5,
    }
}

/// Run a parsed CLI invocation.
pub fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        udino::exec::configure_threads(cli.threads);
    }
    commands::dispatch(cli.command)
}

/// Parse `args` (including argv[0]) and run, returning the process exit
/// code. Clap usage errors map to the config exit code.
pub fn run_from_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
