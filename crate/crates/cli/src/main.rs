//! `deformpose`: command-line front end and synthetic end-to-end harness.
//!
//! Settings resolve as defaults, then flags, then `--config` (TOML), each
//! layer overriding the one before. Exit status: 0 success, 1 usage error,
//! 2 data error, 3 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser)]
#[command(name = "deformpose", version, about = "Deformable-object pose annotation toolkit")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp a mesh with a lattice deformation.
    Deform(DeformArgs),
    /// Generate the spherical capture protocol.
    Protocol(ProtocolArgs),
    /// Rasterize a mesh silhouette to a PGM mask.
    RenderSil(RenderArgs),
    /// Refine per-frame hypotheses of a scene and report the consensus.
    Annotate(AnnotateArgs),
    /// Evaluate ADD, ADD-S and Chamfer distance for a manifest.
    Eval(EvalArgs),
    /// Evaluate (and check) the training losses on a fixture.
    LossesCheck(LossesCheckArgs),
    /// Build a synthetic scene with known ground truth.
    MakeScene(MakeSceneArgs),
}

#[derive(Args)]
pub struct DeformArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output mesh (.obj or .ply).
    #[arg(long)]
    pub out: PathBuf,
    /// Deformation JSON: 24 offsets plus the lattice box.
    #[arg(long)]
    pub deformation: Option<PathBuf>,
    /// Draw offsets uniformly within the bound instead.
    #[arg(long)]
    pub random: bool,
    /// Offset bound as a fraction of the box diagonal.
    #[arg(long, default_value_t = 0.05)]
    pub max_offset_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rigidly align the result back onto the input mesh.
    #[arg(long)]
    pub canonicalize: bool,
    /// Also write the deformation that was applied.
    #[arg(long)]
    pub save_deformation: Option<PathBuf>,
}

#[derive(Args)]
pub struct ProtocolArgs {
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sphere radii in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    /// Lateral elevations in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub elevations: Option<Vec<f64>>,
    #[arg(long)]
    pub azimuth_count: Option<usize>,
    #[arg(long)]
    pub topdown_count: Option<usize>,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Object-to-camera pose: JSON array of 16 row-major numbers.
    #[arg(long)]
    pub pose: PathBuf,
    /// Intrinsics JSON; defaults to the synthetic scene camera.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold coverage at one half instead of keeping it soft.
    #[arg(long)]
    pub binarize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ConsensusArg {
    Winner,
    ChordalMean,
}

#[derive(Args)]
pub struct AnnotateArgs {
    /// scene.json written by make-scene (or assembled by hand).
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tau_t_mm: Option<f64>,
    #[arg(long)]
    pub tau_r_deg: Option<f64>,
    #[arg(long, value_enum)]
    pub consensus: Option<ConsensusArg>,
    /// Skip the inlier-only refit.
    #[arg(long)]
    pub no_refit: bool,
    /// Category recorded in the evaluation manifest.
    #[arg(long, default_value = "body")]
    pub category: String,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sample_count: Option<usize>,
    #[arg(long)]
    pub sample_seed: Option<u64>,
}

#[derive(Args)]
pub struct LossesCheckArgs {
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Loss weights (TOML) replacing the fixture's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the breakdown here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest accepted deviation from the fixture's expected values.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
    /// Write a synthetic fixture (with expected values) and exit.
    #[arg(long)]
    pub make_fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct MakeSceneArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base mesh; a built-in produce-like body when omitted.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma_t_mm: Option<f64>,
    #[arg(long)]
    pub sigma_r_deg: Option<f64>,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    #[arg(long)]
    pub deformation_fraction: Option<f64>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Deform(a) => commands::run_deform(a),
        Command::Protocol(a) => commands::run_protocol(a),
        Command::RenderSil(a) => commands::run_render(a),
        Command::Annotate(a) => commands::run_annotate(a),
        Command::Eval(a) => commands::run_eval(a),
        Command::LossesCheck(a) => commands::run_losses_check(a),
        Command::MakeScene(a) => commands::make_scene(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(error::EXIT_USAGE as u8),
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
