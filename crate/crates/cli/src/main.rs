//! `voiceface`: command-line driver for the cross-modal voice-face engine.
//!
//! Five subcommands cover the whole experiment loop: `generate` a synthetic
//! paired dataset, `train` a checkpoint on it, `evaluate` the checkpoint
//! (1:n matching, retrieval, joint multi-sample variants, per-identity
//! probes), `confidence` for test-design comparability scores, and
//! `segment` for frame-stream detection.
//!
//! Every command is a pure function of its config file, flags, and input
//! files: reruns produce byte-identical outputs, regardless of thread
//! count. Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "voiceface", version, about = "Voice-face cross-modal matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired voice/face dataset (JSON Lines).
    Generate(GenerateArgs),
    /// Train a checkpoint with the voice-anchored triplet loss.
    Train(TrainArgs),
    /// Evaluate a checkpoint: matching, retrieval, joint, or individual.
    Evaluate(EvaluateArgs),
    /// Print the pair-coverage K and confidence T of a test design.
    Confidence(ConfidenceArgs),
    /// Detect high-similarity segments in a frame stream.
    Segment(SegmentArgs),
}

/// Flags shared by every command that reads a config.
#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (one JSON document); flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; section seeds left at 0 derive from it.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output dataset path; falls back to paths.dataset.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Number of identities.
    #[arg(long, value_name = "INT")]
    identities: Option<usize>,
    /// Voice samples per identity.
    #[arg(long, value_name = "INT")]
    voices_per_identity: Option<usize>,
    /// Face samples per identity.
    #[arg(long, value_name = "INT")]
    faces_per_identity: Option<usize>,
    /// Shared-variance fraction between the modalities, in [0, 1].
    #[arg(long, value_name = "REAL")]
    rho: Option<f64>,
    /// Additive feature noise level.
    #[arg(long, value_name = "REAL")]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training dataset; falls back to paths.dataset.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Checkpoint output path; falls back to paths.checkpoint.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Loss-history CSV path; defaults to the checkpoint path with a
    /// `.loss.csv` extension (or paths.history).
    #[arg(long, value_name = "PATH")]
    history: Option<PathBuf>,
    /// Total optimizer steps.
    #[arg(long, value_name = "INT")]
    steps: Option<u64>,
    /// Hinge margin of the triplet loss.
    #[arg(long, value_name = "REAL")]
    margin: Option<f64>,
    /// Which side of the configured split to train on.
    #[arg(long, value_enum, default_value_t = SplitRole::None)]
    split: SplitRole,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate; falls back to paths.checkpoint.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Evaluation dataset; falls back to paths.dataset.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Report JSON path (a CSV twin replaces its extension with .csv);
    /// falls back to paths.report.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Evaluation protocol.
    #[arg(long, value_enum, default_value_t = Task::Match)]
    task: Task,
    /// Candidates per matching instance (the n of 1:n).
    #[arg(long, value_name = "INT")]
    n: Option<usize>,
    /// Number of matching instances to draw.
    #[arg(long, value_name = "INT")]
    instances: Option<usize>,
    /// Voices averaged into each query embedding.
    #[arg(long, value_name = "INT")]
    mv: Option<usize>,
    /// Faces averaged into each candidate embedding.
    #[arg(long, value_name = "INT")]
    mf: Option<usize>,
    /// Target identity for --task individual.
    #[arg(long, value_name = "ID")]
    id: Option<String>,
    /// Probe repeats per opponent for --task individual.
    #[arg(long, value_name = "INT")]
    repeats: Option<usize>,
    /// Which side of the configured split to evaluate on.
    #[arg(long, value_enum, default_value_t = SplitRole::None)]
    split: SplitRole,
}

#[derive(Args)]
struct ConfidenceArgs {
    /// Number of identities in the design (>= 2).
    #[arg(value_name = "NUM_IDENTITIES")]
    num_identities: u64,
    /// Number of sampled test tuples (>= 1).
    #[arg(value_name = "NUM_TUPLES")]
    num_tuples: u64,
    /// Optional JSON output path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input frame stream (JSON Lines with a header line); falls back to
    /// paths.stream.
    #[arg(long, value_name = "PATH")]
    stream: Option<PathBuf>,
    /// Ground-truth frame stream; falls back to paths.ground_truth.
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
    /// Segments CSV output path; falls back to paths.segments.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Emission threshold.
    #[arg(long, value_name = "REAL")]
    threshold: Option<f64>,
    /// Initial window length in frames.
    #[arg(long, value_name = "INT")]
    min_window: Option<usize>,
    /// Maximum window length in frames.
    #[arg(long, value_name = "INT")]
    max_window: Option<usize>,
    /// Window growth step in frames.
    #[arg(long, value_name = "INT")]
    step: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    /// 1:n matching over sampled instances.
    Match,
    /// Gallery retrieval scored by mean average precision.
    Retrieve,
    /// Multi-sample matching; `match` with the --mv/--mf knobs spelled out.
    Joint,
    /// One identity against every opponent in turn.
    Individual,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Match => "match",
            Task::Retrieve => "retrieve",
            Task::Joint => "joint",
            Task::Individual => "individual",
        }
    }
}

/// Which half of the train/test split a command should see.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitRole {
    /// Use the dataset as-is.
    None,
    /// Use the training half.
    Train,
    /// Use the held-out half.
    Test,
}

/// Errors carrying their exit code: usage/config problems exit 1, data
/// problems exit 2, filesystem problems exit 3.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(voiceface_core::Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<voiceface_core::Error> for CliError {
    fn from(e: voiceface_core::Error) -> Self {
        match e {
            voiceface_core::Error::InvalidConfig(msg) => {
                CliError::Usage(format!("invalid config: {msg}"))
            }
            other => CliError::Data(other),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version report success; everything else clap
            // catches is a usage error.
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, message) = match err {
                CliError::Usage(msg) => (1, msg),
                CliError::Data(e) => (2, e.to_string()),
                CliError::Io { path, source } => (3, format!("{}: {source}", path.display())),
            };
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
