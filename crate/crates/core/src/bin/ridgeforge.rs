//! Pipeline CLI: composable subcommands with file-based handoff.
//!
//! Exit codes: 0 success, 1 domain error, 2 input/parse error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use ridgeforge::config::PipelineConfig;
use ridgeforge::crossmodal::{contact_register, decompose_projection, estimate_projection, reprojection_error};
use ridgeforge::error::{Error, Result};
use ridgeforge::geometry::visualize;
use ridgeforge::io;
use ridgeforge::mosaic::{fuse, FuseParams};
use ridgeforge::pose::{canonical_pose, fit_center_axis, slice_cloud};
use ridgeforge::raster::{fill_holes, orthographic_project};
use ridgeforge::register::RigidTransform;
use ridgeforge::synth::{generate_finger, partial_scan, synth_correspondences, FingerSpec};
use ridgeforge::unwrap::{unwrap_cloud, UnwrapParams};

#[derive(Parser)]
#[command(
    name = "ridgeforge",
    version,
    about = "3D fingerprint preprocessing: visualize, unwrap, fuse, normalize pose, register"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Neighborhood radius in mm
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// Raster pitch in mm
    #[arg(long, global = true)]
    pitch: Option<f64>,
    /// Seam penalty mix (defaults to the mean overlap disagreement)
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Blend band width in mm
    #[arg(long = "band-width", global = true)]
    band_width: Option<f64>,
    /// Cross-section slab thickness in mm
    #[arg(long = "slice-thickness", global = true)]
    slice_thickness: Option<f64>,
    /// RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long = "out-dir", global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match &self.config {
            Some(path) => serde_json::from_reader(std::fs::File::open(path)?)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.radius {
            cfg.radius = v;
        }
        if let Some(v) = self.pitch {
            cfg.pitch = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = Some(v);
        }
        if let Some(v) = self.band_width {
            cfg.band_width = v;
        }
        if let Some(v) = self.slice_thickness {
            cfg.slice_thickness = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic finger: cloud, truth, partial scans, correspondences
    Synth {
        /// Sampling density in points per square mm
        #[arg(long, default_value_t = 60.0)]
        density: f64,
        /// Number of partial scans to emit (0 for the full cloud only)
        #[arg(long, default_value_t = 2)]
        scans: usize,
        /// Azimuth half-offset between the two scan views, degrees
        #[arg(long = "scan-offset-deg", default_value_t = 30.0)]
        scan_offset_deg: f64,
        /// Isotropic noise sigma in mm applied to scan points
        #[arg(long = "noise-sigma", default_value_t = 0.0)]
        noise_sigma: f64,
        /// Azimuthal coverage of each scan, degrees
        #[arg(long, default_value_t = 200.0)]
        coverage: f64,
    },
    /// Project the local-surface-depth visualization of a cloud to PGM
    Visualize {
        input: PathBuf,
    },
    /// Unwrap a cloud into a rolled-equivalent image
    Unwrap {
        input: PathBuf,
    },
    /// Register and fuse two clouds along a minimum-penalty seam
    Fuse {
        cloud_a: PathBuf,
        cloud_b: PathBuf,
        correspondences: PathBuf,
    },
    /// Canonicalize finger pose from cross-section ellipse fits
    NormalizePose {
        input: PathBuf,
    },
    /// Estimate and decompose a 2D-3D projection matrix
    Calib2d3d {
        pairs: PathBuf,
    },
    /// Register a cloud against a contact fingerprint target
    ContactRegister {
        cloud: PathBuf,
        pairs: PathBuf,
        target: PathBuf,
    },
    /// Run an evaluation protocol on synthetic data
    Eval {
        /// One of: fusion, pose, calib, contact
        protocol: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config: &'a PipelineConfig,
    #[serde(flatten)]
    body: T,
}

fn emit<T: Serialize>(command: &str, cfg: &PipelineConfig, body: T) -> Result<()> {
    let report = Report {
        command,
        config: cfg,
        body,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn unwrap_params(cfg: &PipelineConfig) -> UnwrapParams {
    UnwrapParams {
        neighborhood_radius: cfg.radius,
        pitch: cfg.pitch,
        max_view_angle_deg: cfg.max_view_angle_deg,
        equalize: true,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let out = &cli.common.out_dir;
    match &cli.cmd {
        Cmd::Synth {
            density,
            scans,
            scan_offset_deg,
            noise_sigma,
            coverage,
        } => {
            let spec = FingerSpec {
                seed: cfg.seed,
                ..Default::default()
            };
            let (cloud, truth) = generate_finger(&spec, *density);
            io::write_xyz(&out.join("finger.xyz"), &cloud)?;
            io::write_json(&out.join("truth.json"), &truth)?;
            let mut scan_files = Vec::new();
            if *scans >= 2 {
                let off = scan_offset_deg.to_radians();
                let views = [
                    Vector3::new(off.cos(), 0.0, off.sin()),
                    Vector3::new(off.cos(), 0.0, -off.sin()),
                ];
                let mut truths = Vec::new();
                for (i, view) in views.iter().enumerate() {
                    let (scan, st) = partial_scan(
                        &cloud,
                        &truth,
                        view,
                        *coverage,
                        *noise_sigma,
                        &RigidTransform::identity(),
                        cfg.seed.wrapping_add(i as u64 + 1),
                    );
                    let path = out.join(format!("scan_{i}.xyz"));
                    io::write_xyz(&path, &scan)?;
                    io::write_json(&out.join(format!("scan_{i}_truth.json")), &st)?;
                    scan_files.push(path.display().to_string());
                    truths.push(st);
                }
                let corr = synth_correspondences(&truths[0], &truths[1], 12, 0.0, cfg.seed)?;
                io::write_correspondences(&out.join("correspondences.json"), &corr)?;
            }
            emit(
                "synth",
                &cfg,
                serde_json::json!({
                    "points": cloud.points.len(),
                    "landmarks": truth.landmarks.len(),
                    "cloud": out.join("finger.xyz").display().to_string(),
                    "scans": scan_files,
                }),
            )
        }
        Cmd::Visualize { input } => {
            let cloud = io::read_cloud(input)?;
            let field = visualize(&cloud, cfg.radius, &Vector3::z(), cfg.max_view_angle_deg)?;
            let pitch = cfg.pitch.max(2.0 * ridgeforge::geometry::median_spacing(&cloud)?);
            let visible = ridgeforge::raster::occlusion_cull(
                &cloud,
                &field.visible,
                pitch,
                ridgeforge::unwrap::OCCLUSION_BAND_MM,
            );
            let mut projected = orthographic_project(
                &cloud,
                Some(&field.gray),
                Some(&visible),
                pitch,
            )?;
            let max_jump = cfg.max_view_angle_deg.to_radians().tan() * pitch;
            ridgeforge::raster::keep_major_component(&mut projected, max_jump);
            let filled = fill_holes(&projected);
            let gray_path = out.join("visualize.pgm");
            let depth_path = out.join("visualize_depth.pgm");
            io::write_pgm8(&gray_path, &filled, Some(&cfg))?;
            io::write_pgm16_depth(&depth_path, &filled, Some(&cfg))?;
            io::write_pos_map(&out.join("visualize_pos.bin"), &filled)?;
            emit(
                "visualize",
                &cfg,
                serde_json::json!({
                    "gray": gray_path.display().to_string(),
                    "depth": depth_path.display().to_string(),
                    "visible_points": field.visible.iter().filter(|v| **v).count(),
                    "d_min": field.d_min,
                    "d_max": field.d_max,
                }),
            )
        }
        Cmd::Unwrap { input } => {
            let cloud = io::read_cloud(input)?;
            let (raster, ctx) = unwrap_cloud(&cloud, &unwrap_params(&cfg))?;
            let img_path = out.join("unwrapped.pgm");
            io::write_pgm8(&img_path, &raster, Some(&cfg))?;
            emit(
                "unwrap",
                &cfg,
                serde_json::json!({
                    "image": img_path.display().to_string(),
                    "center_pixel": ctx.map.center,
                    "projection_grid": {
                        "width": ctx.projection_grid.width,
                        "height": ctx.projection_grid.height,
                        "pitch": ctx.projection_grid.pitch,
                        "origin": [ctx.projection_grid.origin.x, ctx.projection_grid.origin.y],
                    },
                    "output_grid": {
                        "width": ctx.output_grid.width,
                        "height": ctx.output_grid.height,
                        "pitch": ctx.output_grid.pitch,
                        "origin": [ctx.output_grid.origin.x, ctx.output_grid.origin.y],
                    },
                }),
            )
        }
        Cmd::Fuse {
            cloud_a,
            cloud_b,
            correspondences,
        } => {
            let a = io::read_cloud(cloud_a)?;
            let b = io::read_cloud(cloud_b)?;
            let corr = io::read_correspondences(correspondences)?;
            let params = FuseParams {
                pitch: cfg.pitch,
                band_width: cfg.band_width,
                lambda: cfg.lambda,
                ..Default::default()
            };
            let (merged, report) = fuse(&a, &b, &corr, &params)?;
            let merged_path = out.join("merged.xyz");
            io::write_xyz(&merged_path, &merged)?;
            io::write_json(&out.join("fuse_report.json"), &report)?;
            emit(
                "fuse",
                &cfg,
                serde_json::json!({
                    "merged": merged_path.display().to_string(),
                    "report": report,
                }),
            )
        }
        Cmd::NormalizePose { input } => {
            let cloud = io::read_cloud(input)?;
            let cp = canonical_pose(&cloud, &Vector3::y(), cfg.slice_thickness)?;
            let transform_path = out.join("pose_transform.json");
            io::write_transform(&transform_path, &cp.transform)?;
            // per-slice CSV diagnostics
            let set = slice_cloud(&cloud, &Vector3::y(), cfg.slice_thickness)?;
            let axis = fit_center_axis(&set)?;
            let mut csv = String::from("axial_mm,center_x,center_y,semi_major,semi_minor,theta_deg,line_residual_mm\n");
            for (t, e) in &axis.band_ellipses {
                csv.push_str(&format!(
                    "{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6}\n",
                    t,
                    e.center[0],
                    e.center[1],
                    e.semi_major,
                    e.semi_minor,
                    e.theta_deg,
                    axis.rms_residual
                ));
            }
            io::atomic_write(&out.join("pose_slices.csv"), csv.as_bytes())?;
            emit(
                "normalize-pose",
                &cfg,
                serde_json::json!({
                    "transform": transform_path.display().to_string(),
                    "roll_indeterminate": cp.roll_indeterminate,
                    "median_axis_ratio": cp.median_axis_ratio,
                    "axis_direction": [cp.axis.direction.x, cp.axis.direction.y, cp.axis.direction.z],
                    "axis_rms_residual": cp.axis.rms_residual,
                }),
            )
        }
        Cmd::Calib2d3d { pairs } => {
            let pf = io::read_pairs(pairs)?;
            let p = estimate_projection(&pf.pairs)?;
            let e_g = reprojection_error(&p, &pf.pairs)?;
            let cam = decompose_projection(&p)?;
            io::write_json(&out.join("camera.json"), &serde_json::json!({
                "projection": p,
                "camera": cam,
                "reprojection_error_px2": e_g,
            }))?;
            emit(
                "calib-2d3d",
                &cfg,
                serde_json::json!({
                    "camera": cam,
                    "reprojection_error_px2": e_g,
                }),
            )
        }
        Cmd::ContactRegister {
            cloud,
            pairs,
            target,
        } => {
            let c = io::read_cloud(cloud)?;
            let pf = io::read_pairs(pairs)?;
            let t = io::read_pgm(target)?;
            let (aligned, pose) = contact_register(&c, &pf.pairs, &t, &unwrap_params(&cfg))?;
            let img_path = out.join("registered.pgm");
            io::write_pgm8(&img_path, &aligned, Some(&cfg))?;
            io::write_json(&out.join("contact_pose.json"), &pose)?;
            emit(
                "contact-register",
                &cfg,
                serde_json::json!({
                    "image": img_path.display().to_string(),
                    "pose": pose,
                }),
            )
        }
        Cmd::Eval { protocol, trials } => {
            let body = match protocol.as_str() {
                "fusion" => {
                    let noiseless = ridgeforge::eval::fusion_protocol(cfg.seed, *trials, 0.0, 40.0)?;
                    let noisy = ridgeforge::eval::fusion_protocol(cfg.seed, *trials, 0.03, 40.0)?;
                    serde_json::json!({ "noiseless": noiseless, "noisy": noisy })
                }
                "pose" => serde_json::to_value(ridgeforge::eval::pose_protocol(
                    cfg.seed, *trials, 30.0, 40.0,
                )?)?,
                "calib" => serde_json::to_value(ridgeforge::eval::calib_protocol(cfg.seed, *trials)?)?,
                "contact" => serde_json::to_value(ridgeforge::eval::contact_protocol(
                    cfg.seed, *trials, 10.0, 40.0,
                )?)?,
                other => {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("unknown eval protocol '{other}'"),
                    })
                }
            };
            io::write_json(&out.join(format!("eval_{protocol}.json")), &body)?;
            emit("eval", &cfg, body)
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("RIDGEFORGE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
