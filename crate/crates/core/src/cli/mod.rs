//! The `paegan` command-line tool.
//!
//! Subcommands cover the whole pipeline: `gen-data`, `train-pae`,
//! `train-sampler`, `evaluate`, `render` and `pf-run`. Settings come from
//! an optional JSON [`RunConfig`] (`--config`), then from flags, which win.
//! The default output directory is `$PAEGAN_OUT_DIR`, else `./out`. Every
//! artifact-producing command writes a manifest with the resolved
//! configuration, seed and input/output hashes.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{RunConfig, OUT_DIR_ENV};
pub use manifest::{manifest_path, sha256_file, Manifest};

use crate::ballworld::CollisionMode;

#[derive(Debug, Parser)]
#[command(name = "paegan", version, about = "Learned belief tracking versus a particle filter")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate and render an episode set.
    GenData(GenDataArgs),
    /// Train the predictive autoencoder.
    TrainPae(TrainPaeArgs),
    /// Train the sampler and discriminator against a frozen PAE.
    TrainSampler(TrainSamplerArgs),
    /// Track held-out episodes with both trackers and write MSE curves.
    Evaluate(EvaluateArgs),
    /// Render frame strips from saved tracking records.
    Render(RenderArgs),
    /// Track one episode with the particle filter only.
    PfRun(PfRunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Collision {
    PhaseThrough,
    Bounce,
}

impl From<Collision> for CollisionMode {
    fn from(c: Collision) -> Self {
        match c {
            Collision::PhaseThrough => CollisionMode::PhaseThrough,
            Collision::Bounce => CollisionMode::Bounce,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub balls: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: Option<u64>,
    #[arg(long, value_enum)]
    pub collision: Option<Collision>,
    /// Std of the per-step velocity noise.
    #[arg(long)]
    pub process_noise: Option<f64>,
    /// Output file (default: `<out dir>/data.bin`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training episode set; its last 10% is held out.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub updates: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Stop (with a checkpoint) after this many updates in total.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Loss log (default: `<checkpoint>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPaeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint to write (default: `<out dir>/pae.ckpt`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSamplerArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Trained PAE checkpoint.
    #[arg(long)]
    pub pae: PathBuf,
    /// Checkpoint to write (default: `<out dir>/sampler.ckpt`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Per-step observation probability after the warm-up.
    #[arg(long)]
    pub obs_prob: Option<f64>,
    /// Number of episodes to track.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Evaluation episode set (with ground-truth states).
    #[arg(long)]
    pub data: PathBuf,
    /// Training episode set; the baseline is its mean frame.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub pae: PathBuf,
    #[arg(long)]
    pub sampler: Option<PathBuf>,
    /// Output directory (default: `<out dir>/eval`).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Frame-strip column stride; 0 skips the strips.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Episodes to render as strips.
    #[arg(long, default_value_t = 3)]
    pub strips: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Render at most this many episodes.
    #[arg(long)]
    pub max_episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PfRunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Episode index within the set.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also dump every particle at every step as CSV.
    #[arg(long)]
    pub dump_particles: bool,
}

/// Failure of one command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `args` and runs the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainPae(a) => commands::train_pae(a),
        Command::TrainSampler(a) => commands::train_sampler(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Render(a) => commands::render(a),
        Command::PfRun(a) => commands::pf_run(a),
    }
}
