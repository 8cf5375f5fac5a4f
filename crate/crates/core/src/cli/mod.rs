//! The `photocal` command line: `synth`, `calibrate`, `rectify`, `pose` and
//! `eval`. Every command accepts `--config FILE` with `key = value` lines;
//! flags take precedence. Log verbosity follows `PHOTOCAL_LOG` (for example
//! `PHOTOCAL_LOG=info`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4
//! unobservable input or failed convergence.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::SceneOverrides;

#[derive(Debug, Parser)]
#[command(name = "photocal", version, about = "Online photometric calibration and pose refinement")]
pub struct Cli {
    /// Omit timestamps from log lines so logs of repeated runs compare equal.
    #[arg(long, global = true)]
    pub no_log_timestamps: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sequence with ground-truth sidecars in `gt/`.
    Synth(SynthArgs),
    /// Estimate response and vignette online and validate exposures.
    Calibrate(CalibrateArgs),
    /// Write response- and vignette-corrected 16-bit images with masks.
    Rectify(RectifyArgs),
    /// Chain frame-to-frame pose estimates into a trajectory.
    Pose(PoseArgs),
    /// Align trajectories to a reference and write metrics as CSV.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneFlags,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SceneFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    /// Exponent of the inverse response `(M / 255)^gamma`.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Exposure sweep bounds in milliseconds. Equal bounds give a constant exposure.
    #[arg(long)]
    pub exposure_min: Option<f64>,
    #[arg(long)]
    pub exposure_max: Option<f64>,
    #[arg(long)]
    pub exposure_period: Option<f64>,
    #[arg(long)]
    pub exposure_jitter: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub vignette_a2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub vignette_a4: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub vignette_a6: Option<f64>,
    #[arg(long)]
    pub motion_rotation_deg: Option<f64>,
    #[arg(long)]
    pub motion_translation: Option<f64>,
}

impl From<&SceneFlags> for SceneOverrides {
    fn from(f: &SceneFlags) -> Self {
        Self {
            seed: f.seed,
            frames: f.frames,
            width: f.width,
            height: f.height,
            focal: f.focal,
            frame_rate: f.frame_rate,
            gamma: f.gamma,
            exposure_min: f.exposure_min,
            exposure_max: f.exposure_max,
            exposure_period: f.exposure_period,
            exposure_jitter: f.exposure_jitter,
            noise_sigma: f.noise_sigma,
            vignette_a2: f.vignette_a2,
            vignette_a4: f.vignette_a4,
            vignette_a6: f.vignette_a6,
            motion_rotation_deg: f.motion_rotation_deg,
            motion_translation: f.motion_translation,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; defaults to the dataset root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Relative exposure-ratio error that counts as a validation pass.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Frame pairs in the validation window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Fraction of passing pairs needed to freeze.
    #[arg(long)]
    pub pass_fraction: Option<f64>,
    /// Same-radius threshold on the normalized radius.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_gap: Option<u64>,
    #[arg(long)]
    pub max_tracks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RectifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding `pcalib.txt` and `vignette.pgm`; identity if omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Normalize every frame to this exposure (ms) instead of its own.
    #[arg(long)]
    pub reference_exposure: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Dataset written by `synth`; depth comes from `gt/scene.cfg`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding `pcalib.txt` and `vignette.pgm`; raw intensities if omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of frames to process.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame stride between consecutive pose estimates.
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub huber_photometric: Option<f64>,
    #[arg(long)]
    pub huber_geometric: Option<f64>,
    #[arg(long)]
    pub cell: Option<usize>,
    #[arg(long)]
    pub min_gradient: Option<f64>,
    #[arg(long)]
    pub max_keypoints: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference: PathBuf,
    /// Estimated trajectory, as `PATH` or `NAME=PATH`. Repeatable.
    #[arg(long)]
    pub estimate: Vec<String>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Cumulative ATE curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Align with a similarity (scale included) instead of a rigid motion.
    #[arg(long)]
    pub similarity: bool,
    /// Timestamp association tolerance in seconds.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        Error::Unobservable(_)
        | Error::NotReady(_)
        | Error::EmptyResidual(_)
        | Error::UndefinedEnergy(_)
        | Error::Alignment(_) => 4,
        _ => 3,
    }
}

fn init_logging(timestamps: bool) {
    let env = env_logger::Env::new().filter_or("PHOTOCAL_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if !timestamps {
        builder.format_timestamp(None);
    }
    // A second initialization (tests, repeated runs) keeps the first logger.
    let _ = builder.try_init();
}

/// Executes a parsed command.
pub fn execute(cli: &Cli) -> crate::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Rectify(a) => commands::rectify(a),
        Command::Pose(a) => commands::pose(a),
        Command::Eval(a) => commands::eval(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(!cli.no_log_timestamps);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("photocal: {e}");
            exit_code(&e)
        }
    }
}
