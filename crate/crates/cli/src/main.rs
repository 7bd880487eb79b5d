//! `fsmt`: the formality-controlled translation pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsmt_core::metric::MatchMode;
use fsmt_core::FormalityLabel;

#[derive(Parser)]
#[command(
    name = "fsmt",
    version,
    about = "Formality-controlled English to Hindi translation pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed from which every stage seed is derived.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for artifacts [default: ./work].
    #[arg(long, global = true, env = "FMT_MT_WORKDIR")]
    pub work_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the formality lexicon from a contrastive TSV.
    ExtractLexicon {
        #[arg(long)]
        contrastive: Option<PathBuf>,
    },
    /// Tag a parallel corpus with lexicon spans and sentence labels.
    Annotate {
        #[arg(long)]
        parallel: Option<PathBuf>,
        /// Defaults to lexicon.json in the work dir.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train the translation model on the annotated corpus.
    Train {
        #[arg(long)]
        annotated: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Random search over model shape and batch size.
    Search {
        #[arg(long)]
        annotated: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        epochs_per_trial: Option<usize>,
    },
    /// Translate one sentence.
    Translate {
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "formal")]
        formality: FormalityLabel,
        #[arg(long, default_value_t = 1)]
        beams: usize,
        #[arg(long, default_value_t = 100)]
        max_length: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Matched formality accuracy over a contrastive set.
    EvalMetric {
        #[arg(long)]
        contrastive: Option<PathBuf>,
        /// One hypothesis per line, aligned with the contrastive set.
        /// Without it, hypotheses are decoded with the checkpoint.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        /// Register requested when decoding hypotheses.
        #[arg(long, default_value = "formal")]
        formality: FormalityLabel,
        #[arg(long)]
        mode: Option<MatchMode>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Masked-token accuracy and loss inside formality tags.
    EvalMasked {
        #[arg(long)]
        annotated: Option<PathBuf>,
        /// Include per-sentence masks and predictions.
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Serve the HTTP translation API.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        /// Defaults to lexicon.json in the work dir when present.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Defaults to checkpoint.fmt in the work dir.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
