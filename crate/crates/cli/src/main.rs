// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbanomaly::ErrorCategory;

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "dbanomaly", version, about = "Anomaly period detection for DBMS metric time series")]
struct Cli {
    /// JSON file with default values for any flag (flags take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw (data generation, initialization, shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic stat/event dataset with labeled disorders.
    Gen(GenArgs),
    /// Train an autoencoder on stat metrics.
    Train(TrainArgs),
    /// Score every window of a stat file with a trained model.
    Score(ScoreArgs),
    /// Fit control charts to scores and extract ranked anomaly periods.
    Detect(DetectArgs),
    /// Rank event metrics against each detected period.
    Match(MatchArgs),
    /// Run score, detect and match, and write the diagnosis report with charts.
    Report(ReportArgs),
    /// Train several architectures on the same data and tabulate test MSE.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory for stats.csv, events.csv, labels.json and scenario.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Scenario length in minutes.
    #[arg(long)]
    pub minutes: Option<usize>,
    /// Generate the baseline workload only.
    #[arg(long)]
    pub no_injections: bool,
    /// Full scenario description (JSON); overrides --minutes and --no-injections.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    /// Architecture string, e.g. "BTN-(150)-(50)-(150*)-BTN*".
    #[arg(long)]
    pub arch: Option<String>,
    /// Window length in minutes.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 weight on dense-layer weights.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train/validation/test fractions, e.g. 0.6,0.2,0.2.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    /// Stat columns to use, in order (default: all columns of the file).
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Stat metrics CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    pub model: PathBuf,
    /// Optional per-epoch loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Scores CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DetectFlags {
    /// Control limit width in standard deviations.
    #[arg(long)]
    pub k: Option<f64>,
    /// Unflagged windows allowed inside one period.
    #[arg(long)]
    pub gap_tolerance: Option<usize>,
    /// Fit the control limits on these scores instead of the evaluated ones.
    #[arg(long)]
    pub baseline_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Scores CSV from `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Window length the scores were computed with.
    #[arg(long)]
    pub window: Option<usize>,
    /// Detection JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Debug, Args, Default)]
pub struct MatchFlags {
    /// Number of ranked periods to explain.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Minutes appended after each period when slicing event data.
    #[arg(long)]
    pub margin: Option<usize>,
    /// Series normalization before comparison: zscore or raw.
    #[arg(long)]
    pub normalize: Option<String>,
    /// DTW local cost: absolute or squared.
    #[arg(long)]
    pub cost: Option<String>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Detection JSON from `detect`.
    #[arg(long)]
    pub detection: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    /// Matches JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional flat CSV of the same matches.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub matching: MatchFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Event metrics CSV; without it the report has no event rankings.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Reuse scores written by `score` instead of rescoring.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Reuse a detection written by `detect` instead of redetecting.
    #[arg(long)]
    pub detection: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub detect: DetectFlags,
    #[command(flatten)]
    pub matching: MatchFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Architectures to compare; repeat the flag (default: the ten reference models).
    #[arg(long = "arch-list", value_name = "ARCH")]
    pub archs: Vec<String>,
    /// Results CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Model => 4,
        ErrorCategory::Internal => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
