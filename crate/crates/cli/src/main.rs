//! `intertwine` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intertwine::stats::PosthocMethod;
use intertwine::Family;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage or configuration error
  2  data error (missing, malformed or inconsistent input)
  3  numerical failure (non-finite loss or gradient)";

#[derive(Debug, Parser)]
#[command(name = "intertwine", version, about = "Intertwined tdFC/sdConv EEG classifiers: data, training, search and statistics", after_help = EXIT_CODES)]
pub struct Cli {
    /// Print results as JSON with full floating-point precision.
    #[arg(long, global = true)]
    pub json: bool,

    /// Default output directory; relative input paths not found in the
    /// working directory are looked up here.
    #[arg(long, global = true, env = "INTERTWINE_DATA_DIR", default_value = ".")]
    pub data_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known class structure.
    Synth(SynthArgs),
    /// Bandpass filter and standardize a dataset.
    Preprocess(PreprocessArgs),
    /// Build a dataset from delimited per-trial text files.
    Import(ImportArgs),
    /// Train one model and write its record, loss curve and snapshot.
    Train(TrainArgs),
    /// Run a hyperparameter sweep described by a JSON file.
    Sweep(SweepArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Friedman and pairwise tests on an accuracy table.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Print the layer-by-layer shape plan of a configuration.
    Plan(PlanArgs),
    /// Replay the command recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Trials per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Noise standard deviation relative to the unit signal amplitude.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset manifest to read.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    pub low: f64,
    #[arg(long, default_value_t = 30.0)]
    pub high: f64,
    /// Skip the bandpass filter.
    #[arg(long)]
    pub no_filter: bool,
    /// Skip per-channel standardization.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "preprocessed")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// CSV listing one trial per row with columns file,label[,subject,session].
    #[arg(long)]
    pub list: PathBuf,
    /// Delimiter of the trial files: a single character or "tab".
    #[arg(long, default_value = ",")]
    pub delimiter: String,
    #[arg(long, default_value_t = 200.0)]
    pub sample_rate: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "imported")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Separate validation manifest; without it the data is split.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Model configuration JSON; defaults to the reference intertwined model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the default configuration of this family when no config is given.
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Train on unstandardized inputs.
    #[arg(long)]
    pub no_standardize: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; overrides the file.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Friedman's test across the table's columns.
    Friedman(TableArgs),
    /// Bonferroni-adjusted pairwise comparisons between columns.
    Pairwise(PairwiseArgs),
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// CSV or TSV table: header row, first column labels the subjects.
    pub table: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairwiseArgs {
    #[command(flatten)]
    pub table: TableArgs,
    /// rank-z or wilcoxon.
    #[arg(long, default_value = "rank-z")]
    pub method: PosthocMethod,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Model configuration JSON; defaults to the reference intertwined model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(commands::run(&argv) as u8)
}
