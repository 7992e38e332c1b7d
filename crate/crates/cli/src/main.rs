//! `treeloss`: data generation, training, evaluation and experiments.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treeloss::experiment::LevelSel;
use treeloss::{EdgeWeightScheme, LossKind};

/// Bad invocation or missing input; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_scheme(s: &str) -> Result<EdgeWeightScheme, String> {
    match EdgeWeightScheme::from_short_name(s) {
        Some(EdgeWeightScheme::Custom(_)) | None => {
            Err(format!("unknown scheme {s:?}; expected leaf, top, equal or hier (custom weights need --config)"))
        }
        Some(scheme) => Ok(scheme),
    }
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::from_short_name(s)
        .ok_or_else(|| format!("unknown loss {s:?}; expected ce, w, wce or tce"))
}

#[derive(Parser)]
#[command(
    name = "treeloss",
    version,
    args_override_self = true,
    about = "Tree-based semantic losses for sparsely annotated spectral images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a balanced three-level label tree.
    GenTree(GenTreeArgs),
    /// Generate a synthetic spectral dataset.
    GenData(GenDataArgs),
    /// Train a per-pixel classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint at tau = 0 and at a selected threshold.
    Eval(EvalArgs),
    /// Macro metrics and OOD fraction over a threshold grid.
    OodSweep(SweepArgs),
    /// Print or write the ground-distance matrix of a tree.
    DumpDistance(DistanceArgs),
    /// Wasserstein distance between two leaf distributions.
    Wasserstein(WassersteinArgs),
    /// Cross-validated comparison of loss configurations.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
pub struct GenTreeArgs {
    #[arg(long, default_value_t = 4)]
    pub tops: usize,
    #[arg(long, default_value_t = 3)]
    pub mids: usize,
    #[arg(long, default_value_t = 2)]
    pub leaves: usize,
    /// Also store the edge weights of this scheme.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<EdgeWeightScheme>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Generator settings as JSON; flags take precedence.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tops: Option<usize>,
    #[arg(long)]
    pub mids: Option<usize>,
    #[arg(long)]
    pub leaves: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Annotated fraction of each image.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Leaf labels (1-based) kept out of the training annotations.
    #[arg(long, value_delimiter = ',')]
    pub held_out: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Tree file; defaults to the dataset's tree.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Training configuration as JSON; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<EdgeWeightScheme>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_gamma: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pixels_per_image: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on the images of these folds only.
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// `top`, `leaf` or a level index.
    #[arg(long, default_value = "top")]
    pub level: LevelSel,
    /// Use this threshold instead of selecting one.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Test folds; all images when omitted.
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// Folds used to select the threshold.
    #[arg(long, value_delimiter = ',')]
    pub val_folds: Vec<usize>,
    /// Threshold grid resolution (`steps + 1` points on [0, 1]).
    #[arg(long, default_value_t = 100)]
    pub grid_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long, default_value = "top")]
    pub level: LevelSel,
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub grid_steps: usize,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// Weight scheme; the file's own weights are used when omitted.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<EdgeWeightScheme>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct WassersteinArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<EdgeWeightScheme>,
    /// Comma-separated leaf distribution.
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<f64>,
    /// Second distribution; alternatively give `--target`.
    #[arg(long, value_delimiter = ',', conflicts_with = "target")]
    pub q: Option<Vec<f64>>,
    /// Crisp target leaf slot (0-based).
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Args)]
pub struct ExperimentArgs {
    /// Experiment specification as JSON; defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTree(a) => commands::gen_tree(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::OodSweep(a) => commands::ood_sweep(a),
        Command::DumpDistance(a) => commands::dump_distance(a),
        Command::Wasserstein(a) => commands::wasserstein(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
