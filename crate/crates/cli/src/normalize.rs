use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use viewset_core::io::{self, CameraRecord};
use viewset_core::normalize::{
    normalize_sequence, FilterConfig, NormalizeError, RejectReason, Sequence, DEFAULT_GRID_SIZE, DEFAULT_DEPTH_STD_FRACTION,
    MAX_CAMERA_DISTANCE, MIN_CAMERA_DISTANCE,
};

use crate::config::{ConfigFile, RunManifest};
use crate::{Globals, Status};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Camera manifest (JSON lines).
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Point cloud with one "x y z" per line.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Edge length of the target grid cube.
    #[arg(long)]
    grid_size: Option<f64>,
    #[arg(long)]
    min_distance: Option<f64>,
    #[arg(long)]
    max_distance: Option<f64>,
    /// Depth std below this fraction of the mean depth marks a flat view.
    #[arg(long)]
    depth_std_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Settings {
    pub cameras: Option<PathBuf>,
    pub points: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub grid_size: f64,
    pub min_distance: f64,
    pub max_distance: f64,
    pub depth_std_fraction: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            cameras: None,
            points: None,
            out: None,
            grid_size: DEFAULT_GRID_SIZE,
            min_distance: MIN_CAMERA_DISTANCE,
            max_distance: MAX_CAMERA_DISTANCE,
            depth_std_fraction: DEFAULT_DEPTH_STD_FRACTION,
        }
    }
}

impl Args {
    pub fn resolve(self, file: &ConfigFile) -> Result<Settings> {
        let mut s = file.resolve("normalize", Settings::default())?;
        s.cameras = self.cameras.or(s.cameras);
        s.points = self.points.or(s.points);
        s.out = self.out.or(s.out);
        s.grid_size = self.grid_size.unwrap_or(s.grid_size);
        s.min_distance = self.min_distance.unwrap_or(s.min_distance);
        s.max_distance = self.max_distance.unwrap_or(s.max_distance);
        s.depth_std_fraction = self.depth_std_fraction.unwrap_or(s.depth_std_fraction);
        anyhow::ensure!(s.grid_size > 0.0, "grid size must be positive");
        Ok(s)
    }
}

pub fn run(g: &Globals, s: Settings) -> Result<Status> {
    let cam_path = s.cameras.clone().context("--cameras is required")?;
    let pts_path = s.points.clone().context("--points is required")?;
    let out = s.out.clone().context("--out is required")?;
    let records = io::read_camera_manifest(&cam_path)?;
    let cameras = records.iter().map(|r| r.to_pose()).collect::<Result<Vec<_>, _>>()?;
    let points = io::read_point_cloud(&pts_path)?;
    if points.is_empty() {
        anyhow::bail!("{}: point cloud is empty", pts_path.display());
    }
    let filter = FilterConfig { min_distance: s.min_distance, max_distance: s.max_distance, depth_std_fraction: s.depth_std_fraction };
    io::create_dir(&out)?;
    io::write_json(&out.join("run.json"), &RunManifest::new("normalize", g.seed, g.threads, &s)?)?;

    let seq = Sequence::new(points, cameras);
    let (normalized, report) = match normalize_sequence(&seq, s.grid_size, &filter) {
        Ok(r) => r,
        Err(NormalizeError::SingularConfiguration(sv)) => {
            // no unique up direction: the sequence fails the singular-value screen
            let reason = RejectReason::SvdRatio;
            io::write_json(&out.join("report.json"), &serde_json::json!({ "verdict": "reject", "reason": reason, "singular_values": sv }))?;
            println!("reject {}", reason.code());
            return Ok(Status::Rejected);
        }
        Err(e) => return Err(e.into()),
    };
    let cams: Vec<CameraRecord> = records.iter().zip(&normalized.cameras).map(|(r, c)| CameraRecord::from_pose(r.view.clone(), c)).collect();
    io::write_camera_manifest(&out.join("cameras.jsonl"), &cams)?;
    io::write_file(&out.join("points.txt"), io::format_point_cloud(&normalized.points))?;
    io::write_json(&out.join("report.json"), &report)?;
    match report.verdict.reason() {
        None => {
            println!("accept up=[{:.6}, {:.6}, {:.6}] scale={:.6}", report.up.up[0], report.up.up[1], report.up.up[2], report.scale);
            Ok(Status::Success)
        }
        Some(reason) => {
            println!("reject {}", reason.code());
            Ok(Status::Rejected)
        }
    }
}
