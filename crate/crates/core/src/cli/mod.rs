//! The `psg4d` command line.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage or input error.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{resolve, Config, ConfigError, TrainingConfig};

use crate::inference::CallMode;
use crate::io::IoError;
use crate::pipeline::PipelineError;
use crate::transcend::TranscendError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "psg4d", version, about = "4D panoptic scene graph toolkit")]
pub struct Cli {
    /// TOML config file (also PSG4D_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predicted scene graphs against gold with R@K and mR@K.
    Eval(EvalArgs),
    /// Run chained inference for one scene against a backend.
    Infer(InferArgs),
    /// Parse stage output or a signal-token sequence from stdin.
    Parse(ParseArgs),
    /// Write a synthetic gold/prediction corpus.
    Synth(SynthArgs),
    /// Execute a training plan on synthetic toy data.
    Train(TrainArgs),
    /// Finite-difference check of the composite loss gradient.
    Gradcheck(GradcheckArgs),
    /// Category, predicate and triplet counts of a document directory.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub gold: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', value_name = "K,..")]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_name = "T")]
    pub viou: Option<f64>,
    #[arg(long = "temporal-iou", value_name = "T")]
    pub temporal_iou: Option<f64>,
    /// Ignore masks; match on labels only.
    #[arg(long)]
    pub ungrounded: bool,
    /// Training vocabulary (JSON) for seen/unseen splits.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Training label frequencies (JSON) for head/body/tail splits.
    #[arg(long, value_name = "FILE")]
    pub freq: Option<PathBuf>,
    /// Inference transcript; adds per-stage recall against its gold video.
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long, value_name = "OUT")]
    pub report: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    FourCalls,
    SingleCall,
}

impl From<ModeArg> for CallMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FourCalls => CallMode::FourCalls,
            ModeArg::SingleCall => CallMode::SingleCall,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Scene descriptor: a JSON file or a bare video id.
    #[arg(long, value_name = "DESC")]
    pub scene: String,
    /// Duration in seconds when `--scene` is a bare id.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Mock responses: a JSON array of strings, a stage-annotated text, or
    /// one raw response.
    #[arg(long, value_name = "FILE", required_if_eq("backend", "mock"))]
    pub script: Option<PathBuf>,
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// In-context examples in the prompt.
    #[arg(long, value_name = "N")]
    pub examples: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Transcript output.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Annotation document output (default: `<out stem>.annotation.json`).
    #[arg(long, value_name = "FILE")]
    pub document: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "what")]
pub struct ParseWhat {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), value_name = "N")]
    pub stage: Option<u8>,
    /// Parse the `o [Obj] r o [Obj] ts te` output sequence.
    #[arg(long)]
    pub sequence: bool,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub what: ParseWhat,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Plan TOML, or `builtin:default` / `builtin:toy`.
    #[arg(long, value_name = "FILE")]
    pub plan: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue after the last completed step in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Samples per synthetic dataset.
    #[arg(long)]
    pub videos: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `DIM,GRID,STEPS,LAYERS`.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "8,4,2,1")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long = "ff-mult", default_value_t = 2)]
    pub ff_mult: usize,
    #[arg(long, default_value_t = 5)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Also write the vocabulary JSON consumed by `eval --vocab`.
    #[arg(long, value_name = "FILE")]
    pub vocab_out: Option<PathBuf>,
    /// Also write the frequency JSON consumed by `eval --freq`.
    #[arg(long, value_name = "FILE")]
    pub freq_out: Option<PathBuf>,
}

/// A failed command, classified for the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Operational(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Operational(_) => EXIT_FAILURE,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Operational(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Operational(e.to_string())
        }
    }
}

impl From<TranscendError> for CliError {
    fn from(e: TranscendError) -> Self {
        match e {
            TranscendError::Config(_) | TranscendError::Shape(_) => CliError::Input(e.to_string()),
            _ => CliError::Operational(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Operational(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

/// Runs the parsed command with an already resolved config.
pub fn execute(cli: &Cli, cfg: &Config) -> Result<(), CliError> {
    match &cli.command {
        Command::Eval(a) => commands::eval(a, cfg),
        Command::Infer(a) => commands::infer(a, cfg),
        Command::Parse(a) => commands::parse(a),
        Command::Synth(a) => commands::synth(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Stats(a) => commands::stats(a),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PSG4D_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let file = cli.config.clone().or_else(|| std::env::var_os("PSG4D_CONFIG").map(PathBuf::from));
    let result = resolve(file.as_deref(), std::env::vars()).map_err(CliError::from).and_then(|cfg| execute(&cli, &cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
