use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use viewset_core::diffusion::Viewset;
use viewset_core::fit::{fit_grid_with, FitConfig, FitError, UnseenView};
use viewset_core::io::{self, StoredExample, TRAIN_VIEW_NAMES, VAL_VIEW_NAME};
use viewset_core::metrics::{psnr, ssim};
use viewset_core::renderer::render;

use crate::config::{ConfigFile, RunManifest};
use crate::{Globals, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset example directory.
    #[arg(long)]
    example: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Unseen-view weight; repeat for a comparison. When given, the last
    /// training view is held out as the unseen view.
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
    #[arg(long)]
    grid_side: Option<usize>,
    #[arg(long)]
    samples_per_ray: Option<usize>,
    /// Write the grid every this many iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Settings {
    pub example: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub iterations: usize,
    pub step_size: f64,
    pub lambdas: Vec<f64>,
    pub grid_side: usize,
    pub samples_per_ray: usize,
    pub checkpoint_every: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            example: None,
            out: None,
            iterations: f.iterations,
            step_size: f.adam.step_size,
            lambdas: Vec::new(),
            grid_side: f.grid_side,
            samples_per_ray: f.render.samples_per_ray,
            checkpoint_every: None,
        }
    }
}

impl Args {
    pub fn resolve(self, file: &ConfigFile) -> Result<Settings> {
        let mut s = file.resolve("fit", Settings::default())?;
        s.example = self.example.or(s.example);
        s.out = self.out.or(s.out);
        s.iterations = self.iterations.unwrap_or(s.iterations);
        s.step_size = self.step_size.unwrap_or(s.step_size);
        if !self.lambdas.is_empty() {
            s.lambdas = self.lambdas;
        }
        s.grid_side = self.grid_side.unwrap_or(s.grid_side);
        s.samples_per_ray = self.samples_per_ray.unwrap_or(s.samples_per_ray);
        s.checkpoint_every = self.checkpoint_every.or(s.checkpoint_every);
        anyhow::ensure!(s.grid_side > 0, "grid side must be positive");
        anyhow::ensure!(s.lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()), "lambda must be a finite non-negative number");
        anyhow::ensure!(s.checkpoint_every != Some(0), "checkpoint interval must be positive");
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize)]
struct ViewMetrics {
    view: String,
    role: String,
    psnr: f64,
    ssim: Option<f64>,
}

struct Outcome {
    metrics: Vec<ViewMetrics>,
    diverged: bool,
}

fn view_names() -> Vec<&'static str> {
    TRAIN_VIEW_NAMES.iter().copied().chain(std::iter::once(VAL_VIEW_NAME)).collect()
}

/// One fit into `dir`: targets are the listed training views, `unseen`
/// optionally names a held-out training view weighted by `lambda`.
fn fit_once(g: &Globals, s: &Settings, ex: &StoredExample, targets: &[usize], unseen: Option<(usize, f64)>, dir: &Path) -> Result<Outcome> {
    io::create_dir(dir)?;
    let mut cfg = FitConfig { iterations: s.iterations, grid_side: s.grid_side, lambda: unseen.map_or(0.0, |u| u.1), ..Default::default() };
    cfg.adam.step_size = s.step_size;
    cfg.render.samples_per_ray = s.samples_per_ray;
    cfg.render.background = ex.background_rgb();
    cfg.render.workers = g.threads.max(1);
    let vs = Viewset::clean(targets.iter().map(|&i| ex.train[i].0.clone()).collect(), targets.iter().map(|&i| ex.train[i].1).collect())?;
    let unseen_view = unseen.map(|(i, _)| UnseenView { image: &ex.train[i].0, pose: &ex.train[i].1 });

    let ckpt_dir = dir.join("checkpoints");
    if s.checkpoint_every.is_some() {
        io::create_dir(&ckpt_dir)?;
    }
    let mut ckpt_err = None;
    let result = fit_grid_with(&vs, unseen_view, &cfg, |record, grid| {
        let done = record.iteration + 1;
        if let Some(every) = s.checkpoint_every {
            if done % every == 0 && ckpt_err.is_none() {
                ckpt_err = io::write_grid(&ckpt_dir.join(format!("iter_{done:05}.vxg")), grid).err();
            }
        }
    });
    if let Some(e) = ckpt_err {
        return Err(e.into());
    }
    let out = match result {
        Ok(out) => out,
        Err(FitError::Diverged { iteration, loss, initial, factor, patience, history }) => {
            io::write_file(&dir.join("history.txt"), io::format_history(&history))?;
            eprintln!("fit diverged at iteration {iteration}: loss {loss:.6e} stayed above {factor} x initial {initial:.6e} for {patience} iterations");
            for r in history.iter().rev().take(5).rev() {
                eprintln!("  {}", r.to_line());
            }
            return Ok(Outcome { metrics: Vec::new(), diverged: true });
        }
        Err(e) => return Err(e.into()),
    };
    io::write_grid(&dir.join("grid.vxg"), &out.grid)?;
    io::write_file(&dir.join("history.txt"), io::format_history(&out.history))?;

    let renders = dir.join("renders");
    io::create_dir(&renders)?;
    let mut metrics = Vec::new();
    for (i, name) in view_names().into_iter().enumerate() {
        let (target, pose) = if i < TRAIN_VIEW_NAMES.len() { &ex.train[i] } else { &ex.val };
        let img = render(&out.grid, pose, target.size(), &cfg.render);
        io::write_png(&renders.join(format!("{name}.png")), &img)?;
        io::write_f32img(&renders.join(format!("{name}.f32img")), &img)?;
        let role = if targets.contains(&i) {
            "target"
        } else if unseen.is_some_and(|u| u.0 == i) {
            "unseen"
        } else {
            "held_out"
        };
        metrics.push(ViewMetrics { view: name.to_string(), role: role.to_string(), psnr: psnr(&img, target)?, ssim: ssim(&img, target).ok() });
    }
    io::write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(Outcome { metrics, diverged: false })
}

fn print_table(metrics: &[ViewMetrics]) {
    println!("{:<8} {:<9} {:>9} {:>7}", "view", "role", "psnr_db", "ssim");
    for m in metrics {
        let ssim = m.ssim.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:<8} {:<9} {:>9.3} {:>7}", m.view, m.role, m.psnr, ssim);
    }
}

pub fn run(g: &Globals, s: Settings) -> Result<Status> {
    let example = s.example.clone().context("--example is required")?;
    let out = s.out.clone().context("--out is required")?;
    let ex = io::read_example(&example)?;
    io::create_dir(&out)?;
    io::write_json(&out.join("run.json"), &RunManifest::new("fit", g.seed, g.threads, &s)?)?;

    if s.lambdas.is_empty() {
        let outcome = fit_once(g, &s, &ex, &[0, 1, 2], None, &out)?;
        if outcome.diverged {
            return Ok(Status::Diverged);
        }
        print_table(&outcome.metrics);
        return Ok(Status::Success);
    }

    let mut rows = Vec::new();
    for &lambda in &s.lambdas {
        let dir = out.join(format!("lambda_{lambda}"));
        let outcome = fit_once(g, &s, &ex, &[0, 1], Some((2, lambda)), &dir)?;
        if outcome.diverged {
            return Ok(Status::Diverged);
        }
        println!("lambda = {lambda}");
        print_table(&outcome.metrics);
        let val = outcome.metrics.iter().find(|m| m.view == VAL_VIEW_NAME).map(|m| m.psnr).unwrap_or(f64::NAN);
        let unseen = outcome.metrics.iter().find(|m| m.role == "unseen").map(|m| m.psnr).unwrap_or(f64::NAN);
        rows.push(serde_json::json!({ "lambda": lambda, "val_psnr": val, "unseen_psnr": unseen }));
    }
    println!("{:>8} {:>12} {:>12}", "lambda", "val_psnr", "unseen_psnr");
    for r in &rows {
        println!("{:>8} {:>12.3} {:>12.3}", r["lambda"], r["val_psnr"].as_f64().unwrap_or(f64::NAN), r["unseen_psnr"].as_f64().unwrap_or(f64::NAN));
    }
    io::write_json(&out.join("comparison.json"), &rows)?;
    Ok(Status::Success)
}
