//! `tae`: train a toroidal autoencoder on MNIST, render morphs between
//! digits and export latent diagnostics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tae_core::model::Arch;
use tae_core::morphing::{ImageFormat, PathMode};

#[derive(Parser, Debug)]
#[command(name = "tae", version, about = "Toroidal autoencoder on MNIST")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write `checkpoint.tae`, `training_log.csv` and
    /// `config.json` into the output directory.
    Train(TrainArgs),
    /// Decode interpolation paths between two validation images into a grid.
    Morph(MorphArgs),
    /// Encode validation images, write scatter CSV and a latent report.
    Scatter(ScatterArgs),
    /// Reconstruction, classifier and latent metrics on validation images.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Directory holding the MNIST IDX files (raw or gzipped).
    #[arg(long, env = "TAE_DATA_DIR", default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Architecture.
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Number of circles in the latent torus.
    #[arg(long)]
    pub d: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialisation and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight of the reconstruction MSE.
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    /// Weight of the spring (angular uniformity) loss.
    #[arg(long)]
    pub lambda_spring: Option<f64>,
    /// Weight of the quantile (radius distribution) loss.
    #[arg(long)]
    pub lambda_quant: Option<f64>,
    /// Weight of the auxiliary classifier cross-entropy.
    #[arg(long)]
    pub lambda_cls: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Conv,
    Dense,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Conv => Arch::Conv,
            ArchArg::Dense => Arch::Dense,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON config with flat keys; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train on the first N training images only.
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct MorphArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Two validation-set indices to morph between.
    #[arg(long, num_args = 2, value_names = ["FROM", "TO"], required_unless_present = "random", conflicts_with = "random")]
    pub indices: Option<Vec<usize>>,
    /// Pick two distinct validation images at random (see --seed).
    #[arg(long)]
    pub random: bool,
    /// Seed for --random.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Which wrap offsets to render.
    #[arg(long, value_enum, default_value_t = ModeArg::TwoPerDim)]
    pub mode: ModeArg,
    /// Frames per path.
    #[arg(long, default_value_t = tae_core::morphing::DEFAULT_FRAMES)]
    pub frames: usize,
    /// Grid image format.
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    pub format: FormatArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Shortest and opposite wrap per dimension: 2^d paths.
    TwoPerDim,
    /// Every offset in {-1, 0, 1}^d: 3^d paths.
    Full,
}

impl From<ModeArg> for PathMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoPerDim => PathMode::TwoPerDim,
            ModeArg::Full => PathMode::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pgm,
    Png,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pgm => ImageFormat::Pgm,
            FormatArg::Png => ImageFormat::Png,
        }
    }
}

#[derive(Args, Debug)]
pub struct ScatterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of validation images to encode (clamped to the set size).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of validation images to evaluate (clamped to the set size).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Print the metrics as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
