use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "wasscert",
    version,
    about = "Wasserstein-based generalisation certificates for interpolating networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Draw points from a distribution config and write them as CSV.
    Sample(SampleArgs),
    /// Distance between two point files, printed as one JSON line.
    Wasserstein(WassersteinArgs),
    /// Train a network; writes the model file, loss trace, and points.
    Train(RunArgs),
    /// Certify a trained model against a fresh reference cloud.
    Certify(RunArgs),
    /// Fit the decay of the matching distance over a sample-count grid.
    RateFit(RunArgs),
    /// Train a fixed architecture over a growing sample count.
    ConvergeN(RunArgs),
    /// Train a single-hidden-layer family over a width grid.
    ConvergeWidth(RunArgs),
    /// Single-run local training across sample counts.
    LocalStudy(RunArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args)]
pub struct SampleArgs {
    /// JSON distribution config, e.g. {"kind": "uniform-cube", "dim": 2}.
    #[arg(long)]
    pub config: PathBuf,
    /// Number of points to draw.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_stream: u64,
    /// Output CSV path (one point per row, no header).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct WassersteinArgs {
    /// First point file (CSV, one point per row).
    #[arg(long)]
    pub a: PathBuf,
    /// Second point file.
    #[arg(long)]
    pub b: PathBuf,
    /// Transport order, >= 1.
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Entropic regularisation for the unequal-size path; defaults to
    /// 0.01 x median cost.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Marginal tolerance for the unequal-size path.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap for the unequal-size path.
    #[arg(long)]
    pub max_iters: Option<usize>,
}
