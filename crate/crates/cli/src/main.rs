//! `periodgrad` command-line pipeline: corpus generation, feature
//! extraction, training, synthesis, pitch-shifted synthesis and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "periodgrad", version, about = "Diffusion vocoder with explicit periodic conditioning")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic harmonic corpus.
    MakeCorpus(MakeCorpusArgs),
    /// Extract features and normalization statistics.
    Extract(ExtractArgs),
    /// Train a checkpoint.
    Train(TrainArgs),
    /// Copy-synthesis of manifest utterances.
    Synth(SynthArgs),
    /// Synthesis with the log-F0 shifted by a list of semitone offsets.
    Shift(ShiftArgs),
    /// Pitch-accuracy report (F0-RMSE, V/UV-ER) under log-F0 shifts.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub f0_min: Option<f64>,
    #[arg(long)]
    pub f0_max: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Corpus manifest (default: `paths.manifest` from the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Statistics are computed over the first N utterances (default: all).
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Statistics file (default: stats.pgf next to the manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest (default: `paths.manifest` from the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// priorgrad or periodgrad (overrides the config).
    #[arg(long)]
    pub mode: Option<String>,
    /// Total optimizer steps (overrides the config).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Train on the first N utterances (default: all).
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Statistics file (default: stats.pgf next to the manifest).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoint.ckpt and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct Selection {
    /// Corpus manifest (default: `paths.manifest` from the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// First manifest row to use.
    #[arg(long, default_value_t = 0)]
    pub from: usize,
    /// Number of rows (default: to the end).
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub select: Selection,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub select: Selection,
    /// Comma-separated semitone offsets, e.g. -3,0,3.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub semitones: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub select: Selection,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub semitones: Vec<f64>,
    /// Synthesize with this checkpoint.
    #[arg(long, conflicts_with_all = ["generated", "oracle"])]
    pub checkpoint: Option<PathBuf>,
    /// Score existing files `<name><suffix>.wav` written by `shift`.
    #[arg(long, conflicts_with = "oracle")]
    pub generated: Option<PathBuf>,
    /// Score the conditioning sine itself.
    #[arg(long)]
    pub oracle: bool,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PERIODGRAD_LOG", "info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
