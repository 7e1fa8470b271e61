use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use viewset_core::diffusion::{sample_loop, DiffusionError, NoiseSchedule, SamplerConfig, Viewset, DEFAULT_INFERENCE_STEPS};
use viewset_core::field::{VoxelGrid, DEFAULT_SIDE, DEFAULT_WORLD_SIZE};
use viewset_core::geometry::{CameraPose, ImageSize};
use viewset_core::io;
use viewset_core::metrics::psnr;
use viewset_core::minens::{build_character, sample_camera, voxelize, DEFAULT_IMAGE_SIDE, TRAIN_VIEWS};
use viewset_core::renderer::{render, RenderConfig};
use viewset_core::rng::stream;

use crate::config::{ConfigFile, RunManifest};
use crate::{Globals, Status};

/// Sub-samples per axis and peak density used to voxelize an example's character.
const VOXELIZE_SUBSAMPLES: usize = 4;
const VOXELIZE_DENSITY: f64 = 60.0;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Target grid in VXG1 format for the oracle denoiser.
    #[arg(long, conflicts_with = "example")]
    grid: Option<PathBuf>,
    /// Dataset example whose character, voxelized, is the oracle target;
    /// its four cameras become the viewset poses.
    #[arg(long)]
    example: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// DDIM steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Index of a view to condition on (rendered cleanly from the target); repeatable.
    #[arg(long = "clean")]
    clean: Vec<usize>,
    /// Square image side when sampling from a grid file.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    samples_per_ray: Option<usize>,
    /// Save the viewset every this many steps.
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Settings {
    pub grid: Option<PathBuf>,
    pub example: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub steps: usize,
    pub clean: Vec<usize>,
    pub image_size: usize,
    pub samples_per_ray: usize,
    pub snapshot_every: Option<usize>,
    pub schedule: ScheduleRecord,
}

/// Noise schedule parameters echoed into the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub kind: String,
    pub train_steps: usize,
    pub offset: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            grid: None,
            example: None,
            out: None,
            steps: DEFAULT_INFERENCE_STEPS,
            clean: Vec::new(),
            image_size: DEFAULT_IMAGE_SIDE,
            samples_per_ray: RenderConfig::default().samples_per_ray,
            snapshot_every: None,
            schedule: ScheduleRecord { kind: "cosine".into(), train_steps: 1000, offset: 0.008 },
        }
    }
}

impl Args {
    pub fn resolve(self, file: &ConfigFile) -> Result<Settings> {
        let mut s = file.resolve("sample", Settings::default())?;
        if self.grid.is_some() || self.example.is_some() {
            s.grid = self.grid;
            s.example = self.example;
        }
        s.out = self.out.or(s.out);
        s.steps = self.steps.unwrap_or(s.steps);
        if !self.clean.is_empty() {
            s.clean = self.clean;
        }
        s.image_size = self.image_size.unwrap_or(s.image_size);
        s.samples_per_ray = self.samples_per_ray.unwrap_or(s.samples_per_ray);
        s.snapshot_every = self.snapshot_every.or(s.snapshot_every);
        anyhow::ensure!(s.schedule.kind == "cosine", "only the cosine schedule is supported");
        anyhow::ensure!(s.snapshot_every != Some(0), "snapshot interval must be positive");
        Ok(s)
    }
}

struct Target {
    grid: VoxelGrid,
    poses: Vec<CameraPose>,
    size: ImageSize,
    background: [f64; 3],
}

fn load_target(g: &Globals, s: &Settings) -> Result<Target> {
    if let Some(path) = &s.example {
        let ex = io::read_example(path)?;
        let m = &ex.metadata;
        let grid = voxelize(&build_character(&m.articulation, &m.skin), DEFAULT_SIDE, DEFAULT_WORLD_SIZE, VOXELIZE_SUBSAMPLES, VOXELIZE_DENSITY);
        let poses = ex.train.iter().chain(std::iter::once(&ex.val)).map(|v| v.1).collect();
        let size = ImageSize::new(m.image_size[0], m.image_size[1]);
        return Ok(Target { grid, poses, size, background: ex.background_rgb() });
    }
    let Some(path) = &s.grid else {
        bail!("oracle sampling needs a target: pass --grid or --example");
    };
    let grid = io::read_grid(path)?;
    let mut rng = stream(g.seed, "sample/cameras", 0);
    let poses = (0..=TRAIN_VIEWS).map(|_| sample_camera(&mut rng)).collect();
    Ok(Target { grid, poses, size: ImageSize::square(s.image_size), background: [1.0; 3] })
}

pub fn run(g: &Globals, s: Settings) -> Result<Status> {
    let out = s.out.clone().context("--out is required")?;
    let target = load_target(g, &s)?;
    let render_cfg = RenderConfig { samples_per_ray: s.samples_per_ray, background: target.background, ..Default::default() };
    render_cfg.validate()?;
    let targets: Vec<_> = target.poses.iter().map(|p| render(&target.grid, p, target.size, &render_cfg)).collect();
    for &i in &s.clean {
        anyhow::ensure!(i < targets.len(), "clean view {i} does not exist; the viewset has {} views", targets.len());
    }
    let clean: Vec<_> = s.clean.iter().map(|&i| (i, targets[i].clone())).collect();

    io::create_dir(&out)?;
    io::write_json(&out.join("run.json"), &RunManifest::new("sample", g.seed, g.threads, &s)?)?;
    let snapshots = out.join("snapshots");
    if s.snapshot_every.is_some() {
        io::create_dir(&snapshots)?;
    }

    let schedule = NoiseSchedule::cosine(s.schedule.train_steps);
    let cfg = SamplerConfig { inference_steps: s.steps, image_size: target.size, render: render_cfg, pose_channels: true };
    let oracle = |_: &Viewset, _: &[usize]| -> Result<VoxelGrid, DiffusionError> { Ok(target.grid.clone()) };
    let mut rng = stream(g.seed, "sample/noise", 0);
    let mut snap_err = None;
    let output = sample_loop(&oracle, &schedule, &cfg, &target.poses, &clean, &mut rng, |step, vs| {
        let Some(every) = s.snapshot_every else { return };
        if (step + 1) % every != 0 || snap_err.is_some() {
            return;
        }
        let dir = snapshots.join(format!("step_{:04}", step + 1));
        let result = io::create_dir(&dir).and_then(|_| vs.images().iter().enumerate().try_for_each(|(i, img)| io::write_f32img(&dir.join(format!("view_{i}.f32img")), img)));
        snap_err = result.err();
    })?;
    if let Some(e) = snap_err {
        return Err(e.into());
    }

    let views = out.join("views");
    let target_dir = out.join("targets");
    io::create_dir(&views)?;
    io::create_dir(&target_dir)?;
    let mut rows = Vec::new();
    println!("{:<6} {:<6} {:>9}", "view", "clean", "psnr_db");
    for (i, img) in output.viewset.images().iter().enumerate() {
        io::write_png(&views.join(format!("view_{i}.png")), img)?;
        io::write_f32img(&views.join(format!("view_{i}.f32img")), img)?;
        io::write_f32img(&target_dir.join(format!("view_{i}.f32img")), &targets[i])?;
        let p = psnr(img, &targets[i])?;
        let is_clean = s.clean.contains(&i);
        println!("{:<6} {:<6} {:>9.3}", i, is_clean, p);
        rows.push(serde_json::json!({ "view": i, "clean": is_clean, "psnr": p }));
    }
    io::write_grid(&out.join("grid.vxg"), &output.grid)?;
    io::write_json(&out.join("metrics.json"), &rows)?;
    Ok(Status::Success)
}
