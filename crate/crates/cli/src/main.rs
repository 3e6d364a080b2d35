//! `meshfit`: fit, render, export and evaluate articulated textured meshes.

mod error;
mod experiments;
mod fitting;
mod output;
mod viewing;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "meshfit", version, about = "Inverse rendering of articulated, textured meshes")]
struct Cli {
    /// Worker threads for rendering and loading (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit shape, offsets, poses and texture to a scene.
    Fit(FitArgs),
    /// Render a fitted avatar with manifest cameras.
    Render(RenderArgs),
    /// Write the canonical or a posed mesh as OBJ.
    ExportMesh(ExportArgs),
    /// Image and geometry metrics on (held-out) frames.
    Eval(EvalArgs),
    /// Dented-cube comparison of silhouette-only and RGB+silhouette fitting.
    ToyCube(ToyCubeArgs),
    /// Compare analytic gradients with central differences on a tiny scene.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic toy-body scene with ground truth.
    SynthScene(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Scene manifest (scene-v1).
    #[arg(long)]
    pub scene: PathBuf,
    /// Fit configuration as JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    #[arg(long)]
    pub stage2_iters: Option<usize>,
    /// Optimize everything jointly from the start.
    #[arg(long)]
    pub one_stage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoseSource {
    /// Poses refined by the fit (training frames only).
    Fitted,
    /// Initial poses listed in the manifest.
    Manifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shading {
    /// Texture field after stage 2, per-face colors otherwise.
    Auto,
    FaceColors,
    Texture,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame indices to render (default: all).
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<usize>,
    #[arg(long, value_enum, default_value_t = PoseSource::Fitted)]
    pub poses: PoseSource,
    /// Novel pose document; replaces the pose of every rendered frame.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Shading::Auto)]
    pub shading: Shading,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Body model (bodymodel-v1) the checkpoint was fitted with.
    #[arg(long)]
    pub body_model: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Export the mesh in the fitted pose of this training frame.
    #[arg(long, conflicts_with = "pose")]
    pub frame: Option<usize>,
    /// Export the mesh in this pose document.
    #[arg(long)]
    pub pose: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PoseSource::Manifest)]
    pub poses: PoseSource,
    #[arg(long, value_enum, default_value_t = Shading::Auto)]
    pub shading: Shading,
    /// Reference canonical surface for Chamfer and point-to-surface.
    #[arg(long)]
    pub gt_mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CubeMode {
    Both,
    SilOnly,
    RgbSil,
}

#[derive(Debug, Args)]
pub struct ToyCubeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub views: usize,
    #[arg(long, value_enum, default_value_t = CubeMode::Both)]
    pub mode: CubeMode,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = 600)]
    pub iters: usize,
    /// Grid cells per cube face edge.
    #[arg(long, default_value_t = 8)]
    pub subdivisions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Largest accepted relative error per group.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Groups to check (default: all).
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<String>,
    /// Deliberately corrupt the analytic gradient of one group.
    #[arg(long)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = 2)]
    pub cameras: usize,
    #[arg(long, default_value_t = 10)]
    pub poses: usize,
    #[arg(long, default_value_t = 4)]
    pub held_out: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(error::CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => fitting::fit(&a),
        Command::Render(a) => viewing::render(&a),
        Command::ExportMesh(a) => viewing::export(&a),
        Command::Eval(a) => viewing::eval(&a),
        Command::ToyCube(a) => experiments::toy_cube(&a),
        Command::Gradcheck(a) => experiments::gradcheck(&a),
        Command::SynthScene(a) => experiments::synth_scene(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("meshfit: {} error: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
