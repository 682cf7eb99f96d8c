//! `csc-hdr`: mask generation, capture simulation, filter learning,
//! reconstruction, evaluation and experiment sweeps.

mod commands;
mod experiment;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Failure carrying the process exit code: 1 input, 2 usage, 3 numerical.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<csc_hdr::Error> for CliError {
    fn from(e: csc_hdr::Error) -> Self {
        let code = match e {
            csc_hdr::Error::InvalidParameter(_) => 2,
            csc_hdr::Error::NonFinite { .. } => 3,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "csc-hdr", version, about = "Single-shot coded-exposure HDR imaging")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an exposure mask (PFM raster plus JSON sidecar).
    Maskgen(MaskgenArgs),
    /// Simulate a coded 8-bit capture of an HDR scene.
    Simulate(SimulateArgs),
    /// Learn a convolutional filter bank.
    Learn(LearnArgs),
    /// Reconstruct HDR radiance from one capture, or a frame sequence.
    Reconstruct(ReconstructArgs),
    /// Patch-based sparse reconstruction for comparison.
    Baseline(BaselineArgs),
    /// Compare a reconstruction with ground truth.
    Eval(EvalArgs),
    /// Run an experiment grid described by a JSON file.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    Binary,
    Gaussian,
    Uniform,
    FourExposure,
    FixedPattern,
    Interleaved,
}

#[derive(Args)]
pub struct MaskgenArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Four transmissivities for four_exposure and fixed_pattern.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub levels: Option<Vec<f64>>,
    /// Fraction of open pixels for binary masks.
    #[arg(long)]
    pub p_on: Option<f64>,
    /// Mean for gaussian masks.
    #[arg(long)]
    pub mean: Option<f64>,
    /// Standard deviation for gaussian masks.
    #[arg(long)]
    pub stddev: Option<f64>,
    #[arg(long)]
    pub e_low: Option<f64>,
    #[arg(long)]
    pub e_high: Option<f64>,
    /// Output raster (`.pfm`); the sidecar goes next to it as `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// HDR scene (`.pfm` or `.hdr`).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub scene: Option<PathBuf>,
    /// Use the built-in test scene instead of a file.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Dynamic range of the built-in scene in stops.
    #[arg(long, default_value_t = 10.0)]
    pub stops: f64,
    /// Existing mask raster; otherwise one is generated.
    #[arg(long, conflicts_with = "mask_kind")]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "four_exposure")]
    pub mask_kind: KindArg,
    #[arg(long, default_value_t = 7)]
    pub mask_seed: u64,
    /// Capture configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `delta` or `gaussian`.
    #[arg(long)]
    pub psf: Option<String>,
    #[arg(long)]
    pub psf_size: Option<usize>,
    #[arg(long)]
    pub psf_sigma: Option<f64>,
    #[arg(long)]
    pub sensor_dr: Option<f64>,
    /// `linear`, `gamma` or `gamma:<value>`.
    #[arg(long)]
    pub crf: Option<String>,
    /// Fixed window floor instead of automatic metering.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Capture metadata path (`.json`); image files are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct LearnArgs {
    /// Training images: 8-bit PNG or HDR (`.pfm`, `.hdr`); luminance is used.
    #[arg(long, num_args = 1.., required_unless_present = "dead_leaves", conflicts_with = "dead_leaves")]
    pub images: Vec<PathBuf>,
    /// Train on this many generated dead-leaves textures instead.
    #[arg(long)]
    pub dead_leaves: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub dead_leaves_size: usize,
    #[arg(long, default_value_t = 100)]
    pub dead_leaves_seed: u64,
    /// Learning configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8.0)]
    pub lcn_sigma: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lcn_eps: f64,
    /// Output bank (`.pfm` plus `.json` header).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SolverFlags {
    /// Filter bank; the bundled bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Solver configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative primal and dual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub adaptive_rho: bool,
    /// `solve`, `normalized` or `plain`.
    #[arg(long)]
    pub offset_init: Option<String>,
    /// Treat clipped pixels as missing data only.
    #[arg(long)]
    pub no_clip_constraints: bool,
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// Capture metadata files; more than one runs frame-by-frame video mode.
    #[arg(long, num_args = 1.., required = true)]
    pub capture: Vec<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Output `.pfm`/`.hdr` file, or a directory in video mode.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration solver trace (CSV); in video mode one file per frame.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Omp,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub capture: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "omp")]
    pub method: MethodArg,
    #[arg(long)]
    pub atom_size: Option<usize>,
    #[arg(long)]
    pub overcompleteness: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Residual bound per observed sample.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_sparsity: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rec: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Receives report.json, error and false-color images and the scanline CSV.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Scanline row; the middle row by default.
    #[arg(long)]
    pub row: Option<usize>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the configuration's output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("CSC_HDR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("CSC_HDR_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Maskgen(a) => commands::maskgen(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Learn(a) => commands::learn(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => experiment::sweep(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
