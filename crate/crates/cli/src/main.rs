//! Command-line entry point: training, evaluation, inference, dataset
//! synthesis, and the finite-difference gradient check suite.
//!
//! Option resolution order is command-line flag, then config file, then
//! built-in default; the seed additionally falls back to the CAMB_SEED
//! environment variable before its default.

mod commands;
mod failure;
mod settings;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use settings::Settings;

#[derive(Parser)]
#[command(
    name = "camb",
    version,
    about = "Monocular depth estimation with a channel+spatial attention block"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a loss-curve log.
    Train(RunArgs),
    /// Evaluate a checkpoint and print per-image and aggregate metrics.
    Eval(RunArgs),
    /// Predict a depth map for every image under the data root.
    Infer(RunArgs),
    /// Generate a synthetic scene dataset.
    Synth(RunArgs),
    /// Run the finite-difference gradient check suite.
    Gradcheck(RunArgs),
}

/// One flag set shared by every subcommand; flags compose freely and
/// irrelevant ones are ignored by commands that do not use them.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Config file (TOML) supplying any of the long options by name
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Samples per optimization step [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Optimization steps [default: 300]
    #[arg(long)]
    steps: Option<usize>,
    /// RNG seed; falls back to CAMB_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,

    /// Depth loss weight [default: 1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Gradient loss weight [default: 0.8]
    #[arg(long)]
    beta: Option<f64>,
    /// Log offset in the loss transform [default: 0.5]
    #[arg(long)]
    theta: Option<f64>,
    /// Pixel block size for gradient losses [default: 2]
    #[arg(long)]
    block_size: Option<usize>,
    /// Power-average pooling exponent [default: 3]
    #[arg(long)]
    p: Option<f64>,
    /// Channel reduction ratio in the attention bottleneck [default: 4]
    #[arg(long)]
    reduction: Option<usize>,
    /// Vertical flip probability [default: 0.3]
    #[arg(long)]
    zeta: Option<f64>,
    /// Horizontal flip probability [default: 0.3]
    #[arg(long)]
    eta: Option<f64>,

    /// Drop the attention block from every skip connection
    #[arg(long)]
    no_camb: bool,
    /// Drop the block-gradient loss terms
    #[arg(long)]
    no_grad_loss: bool,
    /// Drop the diagonal direction from the gradient loss
    #[arg(long)]
    no_diag: bool,
    /// Fix the similarity weight at 1 instead of 1 - SSIM
    #[arg(long)]
    no_ssim_weight: bool,

    /// Dataset directory of <id>.ppm / <id>.pfm pairs; synthetic scenes are
    /// generated on the fly when omitted
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Checkpoint path (written by train, read by eval/infer)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Output path: loss log (train), metrics table (eval), directory
    /// (infer/synth)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Scenes to synthesize, or to generate on the fly [default: 64 train, 16 eval]
    #[arg(long)]
    count: Option<usize>,
    /// Synthetic scene height [default: 32]
    #[arg(long)]
    height: Option<usize>,
    /// Synthetic scene width [default: 32]
    #[arg(long)]
    width: Option<usize>,
    /// Rectangles per synthetic scene [default: 3]
    #[arg(long)]
    n_shapes: Option<usize>,
    /// Background depth of synthetic scenes [default: 2.0]
    #[arg(long)]
    depth_max: Option<f64>,

    /// Evaluate the ground truth against itself instead of a model
    #[arg(long)]
    bypass_model: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => Settings::resolve(&args).and_then(commands::train),
        Command::Eval(args) => Settings::resolve(&args).and_then(commands::eval),
        Command::Infer(args) => Settings::resolve(&args).and_then(commands::infer),
        Command::Synth(args) => Settings::resolve(&args).and_then(commands::synth),
        Command::Gradcheck(args) => Settings::resolve(&args).and_then(commands::gradcheck),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
