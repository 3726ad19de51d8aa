//! `actret`: synthesize data, train, index, retrieve, evaluate, sweep and plot.
//!
//! Exit status is 1 for invalid input (bad flags, missing files, inconsistent
//! data) and 2 when reading or writing fails part-way.

mod commands;
mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actret::experiment::Variant;
use actret::retrieval::GalleryKind;
use actret::training::Objective;
use clap::builder::TypedValueParser as _;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] actret::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Engine(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "actret", version, about = "Imbalanced activity retrieval by video query")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic imbalanced dataset (manifest, features, semantic bank).
    Synth(SynthArgs),
    /// Train a model; writes checkpoint.vsck and loss.csv into a run directory.
    Train(TrainCmd),
    /// Embed the test split into a gallery file.
    Index(IndexCmd),
    /// Rank the gallery for every labelled test video; writes ranked.csv.
    Retrieve(RetrieveCmd),
    /// Score ranked lists; writes report.json and the diagnostic CSVs.
    Eval(EvalCmd),
    /// Repeat train + evaluate over shots, query counts, splits or objectives.
    Sweep(SweepCmd),
    /// Render a CSV produced by another command as an SVG line chart.
    Plot(plot::PlotArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Dataset manifest (JSON).
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Root that manifest feature paths are relative to (default: the manifest's directory).
    #[arg(long, value_name = "DIR")]
    features: Option<PathBuf>,
    /// Semantic bank file (VSB1).
    #[arg(long, value_name = "FILE")]
    semantic_bank: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Full,
    Baseline,
    Triplet,
    Margin,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Full => Objective::Full,
            ObjectiveArg::Baseline => Objective::Baseline,
            ObjectiveArg::Triplet => Objective::Triplet,
            ObjectiveArg::Margin => Objective::Margin,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    /// Training defaults: desk (small, fast) or large (full scale).
    #[arg(long, value_parser = ["desk", "large"])]
    preset: Option<String>,
    /// Seeds initialization, batch sampling and few-shot draws.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Softmax temperature of the alignment probabilities.
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the visual-alignment term.
    #[arg(long)]
    lambda_v: Option<f64>,
    /// Weight of the semantic-alignment term.
    #[arg(long)]
    lambda_s: Option<f64>,
    /// Visual-bank EMA rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Training videos per novel class (default: the whole training split).
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Video,
    Clip,
    Moment,
}

impl From<ModeArg> for GalleryKind {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Video => GalleryKind::Video,
            ModeArg::Clip => GalleryKind::Clip,
            ModeArg::Moment => GalleryKind::Moment,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct EvalArgs {
    /// Gallery granularity.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Clip length in seconds.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["4", "6", "8"]).map(|s| s.parse::<u8>().unwrap()))]
    clip_len: Option<u8>,
    /// Longest moment proposal, in clips.
    #[arg(long, value_name = "M")]
    max_moment: Option<usize>,
    /// Same-class test videos averaged into one query.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    queries_per_retrieval: Option<u8>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct IndexCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug)]
struct RetrieveCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Gallery written by `index`.
    #[arg(long, value_name = "FILE")]
    gallery: PathBuf,
    /// Seed for drawing the extra queries of multi-query retrieval.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    gallery: PathBuf,
    /// ranked.csv written by `retrieve`.
    #[arg(long, value_name = "FILE")]
    ranked: PathBuf,
    /// Cutoff of the confusion matrix.
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Query-duration bucket edges in seconds.
    #[arg(long, value_delimiter = ',', value_name = "S,S,..")]
    duration_edges: Vec<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum SweepKind {
    /// Novel-class shots (default 1..5).
    Shots,
    /// Queries per retrieval (default 1..5).
    Queries,
    /// Number of base classes (default 50%, 60%, 40% of K).
    Splits,
    /// Training objectives (default: all).
    Variants,
    /// Proposal recall over max moment length for clip lengths 4, 6, 8 (no training).
    Recall,
}

#[derive(Args, Debug)]
struct SweepCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Values to sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Seeds to repeat each value with.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        CliError::Validation(format!(
            "unknown variant '{s}' (expected full, baseline_visual, baseline_semantic, baseline, triplet or margin)"
        ))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("actret: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Index(a) => commands::index(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Plot(a) => plot::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("actret: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
