//! `splatstyle`: synthesize scenes, train style fields, render, evaluate and serve.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "splatstyle",
    version,
    about = "Style-conditioned 3D Gaussian splatting on the CPU"
)]
struct Cli {
    /// Worker threads for rendering and training (1 = fully serial).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene (PLY plus cameras JSON).
    Synth(SynthArgs),
    /// Fit per-Gaussian colors to renders of a scene with the D-SSIM + L1 loss.
    FitColors(FitColorsArgs),
    /// Train a style field on a scene and a set of style images.
    Train(TrainArgs),
    /// Render stylized or unstyled views to PNG.
    Render(RenderArgs),
    /// Render a grid of bilinear blends between four styles.
    Interpolate(InterpolateArgs),
    /// Multi-view consistency report for the field and the 2D baselines.
    Eval(EvalArgs),
    /// Start the WebSocket render service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Lattice,
    Spheres,
    TexturedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Stat,
    Neural,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "spheres")]
    kind: Kind,
    /// Number of Gaussians.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Number of cameras on the arc.
    #[arg(long, default_value_t = 20)]
    cams: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera resolution as WIDTHxHEIGHT.
    #[arg(long, default_value = "96x72", value_parser = parse_res)]
    res: (u32, u32),
    /// Output PLY; cameras go to `<stem>.cameras.json` next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SceneArgs {
    /// Scene PLY.
    #[arg(long)]
    scene: PathBuf,
    /// Cameras JSON (defaults to `<scene stem>.cameras.json` when present).
    #[arg(long)]
    cams: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StyleArgs {
    /// Style image; repeat for several.
    #[arg(long = "style", conflicts_with = "style_dir")]
    style: Vec<PathBuf>,
    /// Directory of PNG/JPEG style images, used in file-name order.
    #[arg(long)]
    style_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// 2D stylization backend for the AdaIN guides.
    #[arg(long, value_enum, default_value = "stat")]
    backend: BackendKind,
    /// Weight file for the neural backend.
    #[arg(long)]
    neural_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitColorsArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output PLY with the fitted colors.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Seed for the random initial colors and camera order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-iteration loss CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    styles: StyleArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output style-field checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a resumable checkpoint to `--out` every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from the checkpoint at `--out` and its `.state` file.
    #[arg(long)]
    resume: bool,
    /// Train the position-only ablation without the hash grid.
    #[arg(long)]
    no_grid: bool,
    /// Per-iteration loss CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Style-field checkpoint; needs `--style`.
    #[arg(long, requires = "style")]
    field: Option<PathBuf>,
    /// Style image; needs `--field`. Without both, base colors are rendered.
    #[arg(long, requires = "field")]
    style: Option<PathBuf>,
    /// Render only this camera index, to the file `--out`.
    #[arg(long)]
    cam: Option<usize>,
    /// Render N views along the camera path instead of the cameras themselves.
    #[arg(long, conflicts_with = "cam")]
    path_views: Option<usize>,
    /// Output resolution as WIDTHxHEIGHT (defaults to each camera's).
    #[arg(long, value_parser = parse_res)]
    res: Option<(u32, u32)>,
    /// Output PNG with `--cam`, otherwise a directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    styles: StyleArgs,
    #[arg(long)]
    field: PathBuf,
    /// Grid side: N×N blends including the four corners.
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    cam: usize,
    #[arg(long, value_parser = parse_res)]
    res: Option<(u32, u32)>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    styles: StyleArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Style-field checkpoint (needed for the gss mode).
    #[arg(long)]
    field: Option<PathBuf>,
    /// Comma-separated modes: gss, gs-adain, adain-gs.
    #[arg(long, value_delimiter = ',', default_value = "gss,gs-adain,adain-gs")]
    mode: Vec<String>,
    /// Held-out views along the camera path.
    #[arg(long, default_value_t = 21)]
    views: usize,
    /// Evaluate a single style index instead of all.
    #[arg(long)]
    style_index: Option<usize>,
    /// Color-fitting iterations for the adain-gs baseline.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    styles: StyleArgs,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn parse_res(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

/// Wrong or missing arguments discovered after parsing; exits with 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPLATSTYLE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::FitColors(a) => commands::fit_colors(a),
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
