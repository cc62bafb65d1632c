//! The three subcommands, with clap argument definitions.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix4, Vector3};
use splatdiff::camera::Camera;
use splatdiff::gradcheck::{audit_scene, AuditCase, AuditOptions, ParamClass, Tolerances};
use splatdiff::gradcheck::{DEFAULT_STEP, DEFAULT_TOL_ABS, DEFAULT_TOL_REL};
use splatdiff::optimize::{fit, FitConfig};
use splatdiff::raster_forward::{render as render_tiled, render_brute_force, RenderOptions};

use crate::error::{CliError, CliResult};
use crate::ppm;
use crate::report::{AuditReport, SceneReport};
use crate::scene_file::{parse_scene, serialize_scene, SceneFile};

#[derive(Debug, Parser)]
#[command(
    name = "splatdiff",
    version,
    about = "Differentiable Gaussian splatting on the CPU"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene file to a PPM image.
    Render(RenderArgs),
    /// Compare analytic gradients with finite differences on generated scenes.
    Gradcheck(GradcheckArgs),
    /// Fit Gaussians to a target PPM image.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub scene: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the final transmittance per pixel as a gray image.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Use the untiled reference renderer.
    #[arg(long)]
    pub brute_force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to audit.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long = "h", default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = DEFAULT_TOL_REL)]
    pub tol_rel: f64,
    #[arg(long, default_value_t = DEFAULT_TOL_ABS)]
    pub tol_abs: f64,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Negate one class of analytic gradients (mean, scale, quat, opacity,
    /// color, view) to check that the audit catches it.
    #[arg(long)]
    pub inject_fault: Option<ParamClass>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub target: PathBuf,
    #[arg(short = 'n', long = "count", default_value_t = 100)]
    pub n_gaussians: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Write the loss before each iteration, one per line.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    /// Take camera and background from this scene file instead of a
    /// centered camera with focal length 1.1 × image width.
    #[arg(long)]
    pub camera: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Render(args) => render(&args),
        Command::Gradcheck(args) => gradcheck(&args),
        Command::Fit(args) => fit_command(&args),
    }
}

pub fn load_scene(path: &Path) -> CliResult<SceneFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scene(&text).map_err(|msg| CliError::parse(path, msg))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn render(args: &RenderArgs) -> CliResult<()> {
    let file = load_scene(&args.scene)?;
    let options = RenderOptions::with_background(file.background);
    let (image, aux) = if args.brute_force {
        render_brute_force(&file.scene, &file.camera, &options)?
    } else {
        let out = render_tiled(&file.scene, &file.camera, &options)?;
        (out.image, out.aux)
    };
    write(&args.output, &ppm::encode(&image))?;
    if let Some(path) = &args.aux {
        let t: Vec<f64> = aux.pixels.iter().map(|p| p.final_t).collect();
        write(path, &ppm::encode_gray(aux.width, aux.height, &t))?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let tolerances = Tolerances {
        rel: args.tol_rel,
        abs: args.tol_abs,
    };
    if !(args.step.is_finite() && args.step > 0.0) {
        return Err(CliError::parse(
            "--h",
            format!("step must be positive, got {}", args.step),
        ));
    }
    let options = AuditOptions {
        step: args.step,
        tolerances,
        fault: args.inject_fault,
    };
    let mut scenes = Vec::new();
    for seed in args.seed..args.seed.saturating_add(args.count) {
        let case = AuditCase::generate(seed)?;
        let report = audit_scene(&case, &options)?;
        println!(
            "seed {seed}: {} gaussians, {}x{}",
            case.scene.len(),
            case.camera.width,
            case.camera.height
        );
        println!("{report}\n");
        scenes.push(SceneReport::new(
            seed,
            case.scene.len(),
            case.camera.width,
            case.camera.height,
            &report,
        ));
    }
    let summary = AuditReport {
        passed: scenes.iter().all(|s| s.passed),
        step: args.step,
        tol_rel: tolerances.rel,
        tol_abs: tolerances.abs,
        fault: args.inject_fault.map(|c| c.name().to_string()),
        scenes,
    };
    if let Some(path) = &args.report {
        write(path, summary.to_json().as_bytes())?;
    }
    if summary.passed {
        Ok(())
    } else {
        Err(CliError::AuditFailed)
    }
}

pub fn fit_command(args: &FitArgs) -> CliResult<()> {
    let bytes = fs::read(&args.target).map_err(|e| CliError::io(&args.target, e))?;
    let target = ppm::decode(&bytes).map_err(|msg| CliError::parse(&args.target, msg))?;
    let (camera, background) = match &args.camera {
        Some(path) => {
            let file = load_scene(path)?;
            (file.camera, file.background)
        }
        None => {
            let focal = 1.1 * target.width as f64;
            let camera = Camera::centered(Matrix4::identity(), focal, target.width, target.height)?;
            (camera, Vector3::zeros())
        }
    };
    let config = FitConfig {
        n_gaussians: args.n_gaussians,
        iterations: args.iters,
        seed: args.seed,
        background,
        ..FitConfig::default()
    };
    let result = fit(&target, &camera, &config)?;
    if let Some(first) = result.loss_history.first() {
        eprintln!(
            "loss {first:.6} -> {:.6} after {} iterations",
            result.final_loss,
            result.loss_history.len()
        );
    }
    let file = SceneFile {
        scene: result.scene,
        camera,
        background,
    };
    write(&args.output, serialize_scene(&file).as_bytes())?;
    if let Some(path) = &args.loss_out {
        let lines: String = result
            .loss_history
            .iter()
            .map(|l| format!("{l:e}\n"))
            .collect();
        write(path, lines.as_bytes())?;
    }
    Ok(())
}
