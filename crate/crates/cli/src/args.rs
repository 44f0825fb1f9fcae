//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "fovreg",
    version,
    about = "Place-recognition descriptors trained by regressing distance onto FoV overlap",
    long_about = "Place-recognition descriptors trained by regressing distance onto FoV overlap.\n\n\
                  Exit codes: 0 success, 2 config or input error, 3 runtime or numeric error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world: poses.csv, observations.bin and pairs.jsonl.
    Synth(SynthArgs),
    /// Write the query -> positive map ids relation for a poses file.
    Gt(GtArgs),
    /// Train an encoder; writes checkpoints, loss_log.csv and run.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint or precomputed descriptors; writes report.json.
    Eval(EvalArgs),
    /// Evaluate every snapshot of a training run; writes curve.csv.
    Curve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Experiment config (JSON); uses its `world` and `pairs` sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GtArgs {
    /// poses.csv to read.
    #[arg(long)]
    pub poses: PathBuf,
    /// Maximum camera distance of a positive, in meters.
    #[arg(long, default_value_t = 25.0)]
    pub dist_m: f64,
    /// Heading difference of a positive must be below this, in degrees.
    #[arg(long, default_value_t = 40.0)]
    pub angle_deg: f64,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Cl,
    Gcl,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (JSON); uses its `train` section.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory written by `synth` (poses.csv, observations.bin, pairs.jsonl).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, loss_log.csv and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the loss of the config. Resets the learning-rate schedule to
    /// the loss default (constant 0.1 for mse and cl, step decay for gcl)
    /// unless the config sets `train.sgd` explicitly.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Period of the gcl step decay (x0.1 every N iterations) [config default: 250000].
    #[arg(long)]
    pub step_period: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlGroundTruthArg {
    Graded,
    Binary,
}

/// Evaluation settings shared by `eval` and `curve`.
#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Dataset directory holding poses.csv and observations.bin.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth JSON written by `gt`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Seed for subsampling KL pairs on large sets.
    #[arg(long, default_value_t = 0)]
    pub kl_seed: u64,
    /// Histogram bins of the KL divergence.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Additive histogram smoothing before renormalization.
    #[arg(long, default_value_t = 1e-10)]
    pub smoothing: f64,
    /// At most this many query-map pairs enter the KL divergence.
    #[arg(long, default_value_t = 1_000_000)]
    pub max_kl_pairs: usize,
    /// Similarity the distances are compared with in the KL divergence.
    #[arg(long, value_enum, default_value_t = KlGroundTruthArg::Graded)]
    pub kl_ground_truth: KlGroundTruthArg,
    /// Fit PCA whitening on the map descriptors before retrieval.
    #[arg(long)]
    pub whiten: bool,
    /// Components kept by whitening [default: full descriptor dimension].
    #[arg(long, requires = "whiten")]
    pub pca_dim: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "descriptors"])))]
pub struct EvalArgs {
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Checkpoint JSON to compute descriptors with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed descriptors in the observations file format.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Recall cut-offs to report, each between 1 and 10.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output CSV file [default: <run>/curve.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}
