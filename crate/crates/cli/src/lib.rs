//! Subcommand implementations behind the `pitchmap` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invalid input
//! data, 3 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod files;

pub const FIELD_CONFIG_ENV: &str = "PITCHMAP_FIELD_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefixes the message with the pipeline stage that failed.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("stage {stage}: {m}")),
            CliError::Data(m) => CliError::Data(format!("stage {stage}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("stage {stage}: {m}")),
        }
    }
}

impl From<pitchmap::field::FieldError> for CliError {
    fn from(e: pitchmap::field::FieldError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<pitchmap::ingest::IngestError> for CliError {
    fn from(e: pitchmap::ingest::IngestError) -> Self {
        use pitchmap::ingest::IngestError;
        match e {
            IngestError::Io(_) | IngestError::SwapMap(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<pitchmap::homography::HomographyError> for CliError {
    fn from(e: pitchmap::homography::HomographyError) -> Self {
        match e {
            pitchmap::homography::HomographyError::Record { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<pitchmap::detection_metrics::EvalError> for CliError {
    fn from(e: pitchmap::detection_metrics::EvalError) -> Self {
        match e {
            pitchmap::detection_metrics::EvalError::Threshold(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<pitchmap::keypoint_metrics::KeypointEvalError> for CliError {
    fn from(e: pitchmap::keypoint_metrics::KeypointEvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<pitchmap::teams::TeamError> for CliError {
    fn from(e: pitchmap::teams::TeamError) -> Self {
        match e {
            pitchmap::teams::TeamError::Degenerate { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<pitchmap::analytics::AnalyticsError> for CliError {
    fn from(e: pitchmap::analytics::AnalyticsError) -> Self {
        use pitchmap::analytics::AnalyticsError;
        match e {
            AnalyticsError::NonPositive { .. } | AnalyticsError::Io(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<pitchmap::render::RenderError> for CliError {
    fn from(e: pitchmap::render::RenderError) -> Self {
        match e {
            pitchmap::render::RenderError::Style(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pitchmap", version, about = "Field registration and tactical analytics for soccer video")]
pub struct Cli {
    /// Field geometry (TOML). Defaults to a 105 x 68 m field.
    #[arg(long, global = true, env = FIELD_CONFIG_ENV)]
    pub field_config: Option<PathBuf>,

    /// Worker threads for frame-parallel stages [default: all cores]
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,

    /// Print the machine-readable report instead of the table
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one image-to-field homography per frame from visible keypoints
    Calibrate(CalibrateArgs),
    /// Project detections into field coordinates and write the track file
    Project(ProjectArgs),
    /// Score predicted boxes against ground truth
    EvalDetections(EvalDetectionsArgs),
    /// Score predicted keypoints against ground truth
    EvalKeypoints(EvalKeypointsArgs),
    /// Split tracks into two teams by jersey color
    Teams(TeamsArgs),
    /// Distance, speed and heatmap statistics from a track file
    Analyze(AnalyzeArgs),
    /// Draw per-frame field views and heatmaps as SVG
    Render(RenderArgs),
    /// Horizontally flip an annotation file
    Augment(AugmentArgs),
    /// Run calibrate, project, teams, analyze and render in one go
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CalibrationFlags {
    /// Frames a fitted homography may be reused for when a frame cannot be fit
    #[arg(long, default_value_t = pitchmap::homography::DEFAULT_MAX_REUSE_GAP)]
    pub max_reuse_gap: u64,
    /// Skip point conditioning before the DLT solve
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    BottomCenter,
    Center,
}

impl From<AnchorArg> for pitchmap::ingest::Anchor {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::BottomCenter => pitchmap::ingest::Anchor::BottomCenter,
            AnchorArg::Center => pitchmap::ingest::Anchor::Center,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProjectionFlags {
    /// Box point used as the player's position
    #[arg(long, value_enum, default_value_t = AnchorArg::BottomCenter)]
    pub anchor: AnchorArg,
    /// Moving-average window (samples) applied to positions; off by default
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub smooth: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalysisFlags {
    /// Heatmap cell size in meters
    #[arg(long, default_value_t = pitchmap::analytics::DEFAULT_CELL_SIZE_M)]
    pub cell_size: f64,
    /// Speed window in seconds
    #[arg(long, default_value_t = pitchmap::analytics::DEFAULT_SPEED_WINDOW_S)]
    pub speed_window: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TeamFlags {
    /// Seed for centroid initialization
    #[arg(long, default_value_t = pitchmap::teams::DEFAULT_SEED)]
    pub seed: u64,
    /// Re-fit centroids every N frames and take each track's majority label
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub reestimate_every: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Frame stream (JSON Lines)
    #[arg(long)]
    pub frames: PathBuf,
    /// Output homography file (JSON Lines)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub calibration: CalibrationFlags,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Frame stream (JSON Lines)
    #[arg(long)]
    pub frames: PathBuf,
    /// Homography file written by `calibrate`
    #[arg(long)]
    pub homographies: PathBuf,
    /// Team file written by `teams`
    #[arg(long)]
    pub teams: Option<PathBuf>,
    /// Output track file (CSV)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub projection: ProjectionFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug, Args)]
pub struct EvalDetectionsArgs {
    /// Predicted boxes (frame stream)
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth boxes (frame stream)
    #[arg(long)]
    pub truth: PathBuf,
    /// Minimum IoU for a match
    #[arg(long, default_value_t = pitchmap::detection_metrics::DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Micro pools counts over all frames; macro averages per-frame scores
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    pub averaging: AveragingArg,
}

#[derive(Debug, Args)]
pub struct EvalKeypointsArgs {
    /// Keypoint predictions (JSON Lines, 12 per frame)
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth keypoints (frame stream)
    #[arg(long)]
    pub truth: PathBuf,
    /// Image width for the pixel conversion [default: from the truth file]
    #[arg(long)]
    pub width: Option<u32>,
    /// Image height for the pixel conversion [default: from the truth file]
    #[arg(long)]
    pub height: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TeamsArgs {
    /// Frame stream with jersey patches or mean colors
    #[arg(long)]
    pub frames: PathBuf,
    /// Output team file (JSON)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub teams: TeamFlags,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Track file written by `project`
    #[arg(long)]
    pub tracks: PathBuf,
    /// Team file; overrides labels stored in the track file
    #[arg(long)]
    pub teams: Option<PathBuf>,
    /// Directory for stats and heatmap files
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisFlags,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Track file written by `project`
    #[arg(long)]
    pub tracks: PathBuf,
    /// Team file; overrides labels stored in the track file
    #[arg(long)]
    pub teams: Option<PathBuf>,
    /// Directory for the SVG files
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Heatmap cell size in meters
    #[arg(long, default_value_t = pitchmap::analytics::DEFAULT_CELL_SIZE_M)]
    pub cell_size: f64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Annotation file (frame stream)
    #[arg(long)]
    pub input: PathBuf,
    /// Output annotation file
    #[arg(long)]
    pub out: PathBuf,
    /// Keypoint id pairs swapped by the flip, e.g. "0:9,1:10,2:11,3:8,4:4"
    #[arg(long)]
    pub swap_map: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Frame stream (JSON Lines)
    #[arg(long)]
    pub frames: PathBuf,
    /// Directory for every stage's output
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub calibration: CalibrationFlags,
    #[command(flatten)]
    pub projection: ProjectionFlags,
    #[command(flatten)]
    pub teams: TeamFlags,
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    /// Skip the per-frame SVG renders
    #[arg(long)]
    pub no_frames: bool,
}

/// A finished command: a table for people and a JSON value for scripts.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub human: String,
    pub json: serde_json::Value,
    pub warnings: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the exit code; output goes to stdout, diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("reports serialize"));
            } else {
                print!("{}", out.human);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let field = files::load_field(cli.field_config.as_deref())?;
    pool.install(|| match &cli.command {
        Command::Calibrate(a) => commands::calibrate(a, &field),
        Command::Project(a) => commands::project(a),
        Command::EvalDetections(a) => commands::eval_detections(a),
        Command::EvalKeypoints(a) => commands::eval_keypoints(a),
        Command::Teams(a) => commands::teams(a),
        Command::Analyze(a) => commands::analyze(a, &field),
        Command::Render(a) => commands::render(a, &field),
        Command::Augment(a) => commands::augment(a),
        Command::Pipeline(a) => commands::pipeline(a, &field),
    })
}
