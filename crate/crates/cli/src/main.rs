//! `coral`: data synthesis, training, sampling and evaluation from the shell.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "coral", version, about = "Contrastive-regularized class-conditional diffusion on long-tailed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a long-tailed ring-of-Gaussians dataset (LTDS1).
    MakeData(MakeDataArgs),
    /// Train a denoiser from a run config.
    Train(TrainArgs),
    /// Draw class-conditional samples from a checkpoint.
    Sample(SampleArgs),
    /// Compare generated samples against real data.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct MakeDataArgs {
    /// Number of classes
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Sample count of the head class
    #[arg(long, default_value_t = 5000)]
    head_count: usize,
    /// Tail-to-head imbalance ratio, in (0, 1]
    #[arg(long, default_value_t = 0.01)]
    rho: f64,
    /// Radius of the ring of class centers
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Per-class isotropic standard deviation
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Data dimensionality (>= 2)
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Root seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output LTDS1 path; class counts go to <out>.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config (flat dotted-key JSON)
    #[arg(long)]
    config: PathBuf,
    /// Force w = 0, i.e. plain DDPM training [default: off]
    #[arg(long)]
    baseline: bool,
    /// Continue from this checkpoint up to train.steps total steps [default: none]
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training data, overriding data.train [default: from config]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory, overriding out.dir [default: from config]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Root seed, overriding train.seed [default: from config]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SigmaArg {
    Beta,
    Posterior,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Guidance weight [default: 0.6, or sample.omega from --config]
    #[arg(long)]
    omega: Option<f64>,
    /// Samples per class [default: 100, or sample.n_per_class from --config]
    #[arg(long)]
    per_class: Option<usize>,
    /// Sampler seed [default: 0, or sample.seed from --config]
    #[arg(long)]
    seed: Option<u64>,
    /// Reverse-step variance [default: beta, or sample.sigma from --config]
    #[arg(long, value_enum)]
    sigma: Option<SigmaArg>,
    /// Run config whose architecture must match the checkpoint [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output LTDS1 path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeaturesArg {
    Raw,
    Probe,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Real (reference) LTDS1 dataset
    #[arg(long)]
    real: PathBuf,
    /// Generated LTDS1 dataset
    #[arg(long)]
    gen: PathBuf,
    /// Checkpoint for latent diagnostics on the real set [default: none]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// k for improved precision/recall
    #[arg(long, default_value_t = 3)]
    knn_k: usize,
    /// k-means clusters for PRD [default: 20 x number of classes]
    #[arg(long)]
    clusters: Option<usize>,
    /// k for latent kNN purity
    #[arg(long, default_value_t = 10)]
    purity_k: usize,
    /// Noise level for latent extraction [default: floor(0.05 T)]
    #[arg(long)]
    latent_t: Option<usize>,
    /// Feature space for distribution metrics
    #[arg(long, value_enum, default_value_t = FeaturesArg::Raw)]
    features: FeaturesArg,
    /// Seed for clustering, the probe and latent noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path
    #[arg(long)]
    out: PathBuf,
    /// Latent feature CSV path [default: <out>.latents.csv when --checkpoint is given]
    #[arg(long)]
    latents_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeData(a) => commands::make_data(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
