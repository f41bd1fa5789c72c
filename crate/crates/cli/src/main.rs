//! `gvgs`: command-line pipelines over the gvgs-core toolkit.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, Kind};

#[derive(Parser, Debug)]
#[command(name = "gvgs", version, about = "Gaussian splatting geometry pipelines")]
#[command(after_help = "Environment:\n  GVGS_THREADS  maximum number of worker threads\n  RUST_LOG      log filter (e.g. info)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SceneInputs {
    /// Gaussian scene PLY.
    #[arg(long)]
    scene: PathBuf,
    /// Cameras JSON.
    #[arg(long)]
    cameras: PathBuf,
}

#[derive(Args, Debug)]
struct PairArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Reference view id.
    #[arg(long)]
    reference: u32,
    /// Neighbor view id.
    #[arg(long)]
    neighbor: u32,
    /// Visibility threshold on the per-Gaussian weight.
    #[arg(long, default_value_t = gvgs_core::visibility::DEFAULT_TAU)]
    tau: f64,
    /// Co-visibility threshold on the selective opacity.
    #[arg(long, default_value_t = gvgs_core::visibility::DEFAULT_COVIS_THRESHOLD)]
    threshold: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: ground-truth and perturbed Gaussians,
    /// cameras, ray-traced images, depth, monocular depth and a train config.
    Synth {
        /// textured-plane, sphere or two-planes-occluder.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Override the image width and height.
        #[arg(long)]
        size: Option<usize>,
        /// Initial center noise as a fraction of the scene extent.
        #[arg(long, default_value_t = 0.02)]
        init_noise: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view: color.png, depth.pfm, alpha.png and normal.png.
    Render {
        #[command(flatten)]
        inputs: SceneInputs,
        /// View id to render.
        #[arg(long)]
        view: u32,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian-level visibility of a neighbor view and the reference view's
    /// selective opacity: weights.csv, opacity.pfm, covis.png, weights.png.
    Visibility(PairArgs),
    /// Reprojection error and the visibility-weighted geometric loss of a
    /// view pair: phi.pfm, depth_ok.png, covis.png, union.png, report.json.
    Consistency {
        #[command(flatten)]
        pair: PairArgs,
        /// Reprojection error bound (pixels) of the depth check.
        #[arg(long, default_value_t = gvgs_core::consistency::DEFAULT_PHI_MAX)]
        phi_max: f64,
        /// Weight of the selective opacity inside the loss weight.
        #[arg(long, default_value_t = gvgs_core::consistency::DEFAULT_LAMBDA_VIS)]
        lambda_vis: f64,
    },
    /// Quadtree calibration of monocular depth against rendered depth:
    /// calibrated.pfm, blocks.csv and residuals.json.
    Calibrate {
        /// Monocular depth PFM.
        #[arg(long)]
        mono: PathBuf,
        /// Rendered depth PFM.
        #[arg(long)]
        rendered: PathBuf,
        /// Supervision mask PNG (all pixels when omitted).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Quadtree level (2^level blocks per side).
        #[arg(long)]
        level: usize,
        /// Spread estimator: mean or median absolute deviation.
        #[arg(long, default_value = "mean")]
        spread: String,
        /// Minimum valid pixels per block before falling back to the parent.
        #[arg(long)]
        n_min: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a scene from a TOML/JSON config: metrics.csv, scene.ply and
    /// config.toml (fully resolved).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides paths.output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render every view, fuse depth into a TSDF and extract a mesh (.ply or
    /// .obj by extension).
    Mesh {
        #[command(flatten)]
        inputs: SceneInputs,
        /// Voxels along the longest axis of the grid.
        #[arg(long, default_value_t = gvgs_core::meshing::DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Grid padding as a fraction of the scene extent.
        #[arg(long, default_value_t = gvgs_core::meshing::DEFAULT_PADDING)]
        padding: f64,
        /// Fuse only pixels whose accumulated alpha exceeds this.
        #[arg(long, default_value_t = 0.5)]
        acc_threshold: f64,
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
        /// Output mesh file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GVGS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::new(Kind::Config, format!("GVGS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(CliError::runtime)
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    configure_threads()?;
    match cli.command {
        Command::Synth {
            scene,
            seed,
            size,
            init_noise,
            out,
        } => commands::synth(&scene, seed, size, init_noise, &out),
        Command::Render { inputs, view, out } => commands::render(&inputs.scene, &inputs.cameras, view, &out),
        Command::Visibility(p) => commands::visibility(&p.inputs.scene, &p.inputs.cameras, p.reference, p.neighbor, p.tau, p.threshold, &p.out),
        Command::Consistency { pair: p, phi_max, lambda_vis } => commands::consistency(
            &p.inputs.scene,
            &p.inputs.cameras,
            commands::PairSettings {
                reference: p.reference,
                neighbor: p.neighbor,
                tau: p.tau,
                threshold: p.threshold,
                phi_max,
                lambda_vis,
            },
            &p.out,
        ),
        Command::Calibrate {
            mono,
            rendered,
            mask,
            level,
            spread,
            n_min,
            out,
        } => commands::calibrate(&mono, &rendered, mask.as_deref(), level, &spread, n_min, &out),
        Command::Train { config, out } => commands::train(&config, out.as_deref()),
        Command::Mesh {
            inputs,
            resolution,
            padding,
            acc_threshold,
            ascii,
            out,
        } => commands::mesh(&inputs.scene, &inputs.cameras, resolution, padding, acc_threshold, ascii, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
