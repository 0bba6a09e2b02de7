mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cdfuse",
    version,
    about = "Bi-temporal change detection with state-space fusion"
)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace)
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory or a synthetic set
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory
    Eval(EvalArgs),
    /// Predict the change mask for one image pair
    Infer(InferArgs),
    /// Compare autodiff gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset to disk
    Synth(SynthArgs),
    /// Train and evaluate the component ablation matrix
    Ablate(AblateArgs),
}

/// Where training samples come from.
#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Dataset root with A/, B/, label/ (or train/ and val/ subsets)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train on this many synthetic pairs (plus one eighth as many held out)
    #[arg(long)]
    synth: Option<usize>,
}

/// Settings shared by `train` and `ablate`; each overrides the config file.
#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// Flat `key = value` settings file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    /// Cross-entropy, Lovasz and Dice weights, e.g. `1,0.5,0.35`
    #[arg(long)]
    loss_weights: Option<String>,
    #[arg(long)]
    no_diff: bool,
    #[arg(long)]
    no_chn: bool,
    #[arg(long)]
    no_dice: bool,
    #[arg(long)]
    no_ecr: bool,
    /// Random flips of training crops
    #[arg(long)]
    augment: bool,
    /// Side of synthetic images
    #[arg(long, default_value_t = 64)]
    synth_size: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for checkpoints and logs
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint (its settings take precedence, except --iters)
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write a change map per sample into this directory
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batch: usize,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    /// Output mask image (0 / 255)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// all, tensor, ssm, loss or model
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    overrides: Overrides,
    /// CSV file to write
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp_secs()
        .init();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
