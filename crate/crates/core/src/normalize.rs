//! Normalization of a reconstructed camera sequence into the canonical
//! voxel volume: center the point cloud, align the world up direction,
//! center vertically, scale to the grid, then screen out sequences whose
//! cameras or depths look implausible.
//!
//! Up is estimated from photographer's bias: handheld cameras have almost
//! no roll, so their x axes lie (nearly) in the horizontal plane and the
//! direction least represented among them is vertical.

use nalgebra::{DMatrix, Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraPose, GeometryError, Mat3, Vec3};

pub const DEFAULT_GRID_SIZE: f64 = 1.2;
/// Fraction of the half-side the scaled cloud may occupy.
pub const FILL_FRACTION: f64 = 0.95;
pub const MIN_CAMERA_DISTANCE: f64 = 0.85;
pub const MAX_CAMERA_DISTANCE: f64 = 6.5;
pub const DEFAULT_DEPTH_STD_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need at least {needed} cameras, got {got}")]
    TooFewCameras { needed: usize, got: usize },
    #[error("camera x axes are degenerate (singular values {0:?})")]
    SingularConfiguration([f64; 3]),
    #[error("all points coincide with the origin after centering")]
    CoincidentPoints,
    #[error("depth statistics cover {got} views, expected {expected}")]
    DepthCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-view depth summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub points: Vec<Vec3>,
    pub cameras: Vec<CameraPose>,
    pub depth_values: Option<Vec<DepthStats>>,
}

impl Sequence {
    pub fn new(points: Vec<Vec3>, cameras: Vec<CameraPose>) -> Self {
        Self { points, cameras, depth_values: None }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |a, p| a + p);
        Some(sum / self.points.len() as f64)
    }

    /// Moves the world origin to `origin` without changing any image.
    fn translate(&self, origin: &Vec3) -> Result<Self, NormalizeError> {
        let points = self.points.iter().map(|p| p - origin).collect();
        let cameras = self
            .cameras
            .iter()
            .map(|c| CameraPose::new(*c.rotation(), c.rotation() * origin + c.translation(), *c.intrinsics()))
            .collect::<Result<_, _>>()?;
        Ok(Self { points, cameras, depth_values: self.depth_values.clone() })
    }

    /// Applies the world rotation `q` to points and cameras.
    pub fn rotate(&self, q: &Mat3) -> Result<Self, NormalizeError> {
        let points = self.points.iter().map(|p| q * p).collect();
        let cameras = self
            .cameras
            .iter()
            .map(|c| CameraPose::new(c.rotation() * q.transpose(), *c.translation(), *c.intrinsics()))
            .collect::<Result<_, _>>()?;
        Ok(Self { points, cameras, depth_values: self.depth_values.clone() })
    }

    /// Scales the world about the origin; depths scale along.
    fn scale(&self, s: f64) -> Result<Self, NormalizeError> {
        let points = self.points.iter().map(|p| p * s).collect();
        let cameras = self
            .cameras
            .iter()
            .map(|c| CameraPose::new(*c.rotation(), c.translation() * s, *c.intrinsics()))
            .collect::<Result<_, _>>()?;
        let depth_values = self
            .depth_values
            .as_ref()
            .map(|d| d.iter().map(|v| DepthStats { mean: v.mean * s, std: v.std * s }).collect());
        Ok(Self { points, cameras, depth_values })
    }
}

/// Shifts the cloud's centroid to the origin, moving the cameras with it.
pub fn center_translation(seq: &Sequence) -> Result<(Sequence, Vec3), NormalizeError> {
    let centroid = seq.centroid().ok_or(NormalizeError::EmptyCloud)?;
    Ok((seq.translate(&centroid)?, centroid))
}

/// Why a sequence was screened out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooClose,
    TooFar,
    FlatDepth,
    YInconsistent,
    SvdRatio,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::TooClose => "too_close",
            RejectReason::TooFar => "too_far",
            RejectReason::FlatDepth => "flat_depth",
            RejectReason::YInconsistent => "y_inconsistent",
            RejectReason::SvdRatio => "svd_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            Verdict::Accept => None,
            Verdict::Reject(r) => Some(*r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpEstimate {
    pub up: [f64; 3],
    /// Singular values of the centered x-axis stack, descending.
    pub singular_values: [f64; 3],
    /// `Some` when the diagnostics fail.
    pub failure: Option<RejectReason>,
}

impl UpEstimate {
    pub fn up(&self) -> Vec3 {
        Vec3::from(self.up)
    }
}

/// Estimates the world up direction from the cameras' x axes.
///
/// The x axes (in world coordinates) are stacked as rows, the row mean is
/// subtracted, and the right singular vector with the smallest singular
/// value is taken as up, signed to agree with the first camera's y axis.
/// Diagnostics fail when some camera's y axis disagrees in sign with the
/// first one's, or when `s1^2 / s2^2 >= s2^2 / s3^2`.
pub fn estimate_up(seq: &Sequence) -> Result<UpEstimate, NormalizeError> {
    let n = seq.cameras.len();
    if n < 3 {
        return Err(NormalizeError::TooFewCameras { needed: 3, got: n });
    }
    let axes: Vec<Vec3> = seq.cameras.iter().map(|c| c.axis_in_world(0)).collect();
    let mean = axes.iter().fold(Vec3::zeros(), |a, v| a + v) / n as f64;
    let m = DMatrix::from_fn(n, 3, |i, j| axes[i][j] - mean[j]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = order.map(|i| svd.singular_values[i]);
    if sv[1] <= 1e-12 * sv[0].max(1.0) {
        return Err(NormalizeError::SingularConfiguration(sv));
    }
    let mut up = Vec3::new(v_t[(order[2], 0)], v_t[(order[2], 1)], v_t[(order[2], 2)]).normalize();
    let y_first = seq.cameras[0].axis_in_world(1);
    if up.dot(&y_first) < 0.0 {
        up = -up;
    }
    let consistent = seq.cameras.iter().all(|c| c.axis_in_world(1).dot(&y_first) > 0.0);
    let (s1, s2, s3) = (sv[0] * sv[0], sv[1] * sv[1], sv[2] * sv[2]);
    // s1/s2 < s2/s3, written without dividing by a possibly zero s3
    let planar = s1 * s3 < s2 * s2;
    let failure = if !consistent {
        Some(RejectReason::YInconsistent)
    } else if !planar {
        Some(RejectReason::SvdRatio)
    } else {
        None
    };
    Ok(UpEstimate { up: up.into(), singular_values: sv, failure })
}

/// Smallest rotation taking `up` onto `+y`.
pub fn up_alignment(up: &Vec3) -> Mat3 {
    let target = Vec3::y();
    match Rotation3::rotation_between(up, &target) {
        Some(r) => r.into_inner(),
        // antiparallel: any half turn about a horizontal axis
        None => Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::x()), std::f64::consts::PI).into_inner(),
    }
}

/// Centers the cloud vertically (midpoint of its y range at 0) and scales
/// the world so the largest absolute coordinate is `d * 0.95 / 2`.
/// Returns the sequence, the vertical shift and the scale factor.
pub fn vertical_recenter_and_scale(seq: &Sequence, d: f64) -> Result<(Sequence, f64, f64), NormalizeError> {
    if seq.points.is_empty() {
        return Err(NormalizeError::EmptyCloud);
    }
    let (lo, hi) = seq.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let mid = 0.5 * (lo + hi);
    let shifted = seq.translate(&Vec3::new(0.0, mid, 0.0))?;
    let max_abs = shifted.points.iter().map(|p| p.amax()).fold(0.0, f64::max);
    if max_abs <= 0.0 {
        return Err(NormalizeError::CoincidentPoints);
    }
    let s = d * FILL_FRACTION / (2.0 * max_abs);
    Ok((shifted.scale(s)?, mid, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_distance: f64,
    pub max_distance: f64,
    /// A view is flat when its depth std falls below this fraction of its mean depth.
    pub depth_std_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_distance: MIN_CAMERA_DISTANCE,
            max_distance: MAX_CAMERA_DISTANCE,
            depth_std_fraction: DEFAULT_DEPTH_STD_FRACTION,
        }
    }
}

/// Depth statistics per view, from the supplied values or from the cloud.
pub fn depth_stats(seq: &Sequence) -> Result<Vec<DepthStats>, NormalizeError> {
    if let Some(d) = &seq.depth_values {
        if d.len() != seq.cameras.len() {
            return Err(NormalizeError::DepthCountMismatch { expected: seq.cameras.len(), got: d.len() });
        }
        return Ok(d.clone());
    }
    Ok(seq
        .cameras
        .iter()
        .map(|c| {
            let depths: Vec<f64> = seq.points.iter().map(|p| -c.world_to_camera(p).z).filter(|z| *z > 0.0).collect();
            if depths.is_empty() {
                return DepthStats { mean: 0.0, std: 0.0 };
            }
            let n = depths.len() as f64;
            let mean = depths.iter().sum::<f64>() / n;
            let var = depths.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
            DepthStats { mean, std: var.sqrt() }
        })
        .collect())
}

/// Screens a normalized sequence.
///
/// Checks run in order: up-direction diagnostics (with 3+ cameras), camera
/// distance band `[min_distance, max_distance]` on `|T|`, then per-view
/// depth spread. The band is inclusive: exactly 0.85 or 6.5 passes.
pub fn filter_sequence(seq: &Sequence, cfg: &FilterConfig) -> Result<Verdict, NormalizeError> {
    if seq.cameras.len() >= 3 {
        match estimate_up(seq) {
            Ok(UpEstimate { failure: Some(r), .. }) => return Ok(Verdict::Reject(r)),
            Ok(_) => {}
            Err(NormalizeError::SingularConfiguration(_)) => return Ok(Verdict::Reject(RejectReason::SvdRatio)),
            Err(e) => return Err(e),
        }
    }
    for c in &seq.cameras {
        let dist = c.translation().norm();
        if dist < cfg.min_distance {
            return Ok(Verdict::Reject(RejectReason::TooClose));
        }
        if dist > cfg.max_distance {
            return Ok(Verdict::Reject(RejectReason::TooFar));
        }
    }
    for d in depth_stats(seq)? {
        if d.std <= cfg.depth_std_fraction * d.mean {
            return Ok(Verdict::Reject(RejectReason::FlatDepth));
        }
    }
    Ok(Verdict::Accept)
}

/// Everything applied to one sequence: `x -> scale * (R (x - shift) - vertical_shift * y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub shift: [f64; 3],
    /// Row-major world rotation aligning up with `+y`.
    pub rotation: [f64; 9],
    pub vertical_shift: f64,
    pub scale: f64,
    pub up: UpEstimate,
    pub verdict: Verdict,
}

impl NormalizationReport {
    pub fn rotation_matrix(&self) -> Mat3 {
        Mat3::from_row_slice(&self.rotation)
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        let r = self.rotation_matrix() * (x - Vec3::from(self.shift));
        (r - Vec3::new(0.0, self.vertical_shift, 0.0)) * self.scale
    }

    pub fn apply_camera(&self, c: &CameraPose) -> Result<CameraPose, GeometryError> {
        let q = self.rotation_matrix();
        let shift = Vec3::from(self.shift);
        let t = c.rotation() * shift + c.translation();
        let r = c.rotation() * q.transpose();
        let t = (r * Vec3::new(0.0, self.vertical_shift, 0.0) + t) * self.scale;
        CameraPose::new(r, t, *c.intrinsics())
    }
}

/// Full pipeline: translation, up alignment, vertical centering and
/// scaling, then screening.
pub fn normalize_sequence(seq: &Sequence, d: f64, filter: &FilterConfig) -> Result<(Sequence, NormalizationReport), NormalizeError> {
    let (centered, shift) = center_translation(seq)?;
    let up = estimate_up(&centered)?;
    let q = up_alignment(&up.up());
    let aligned = centered.rotate(&q)?;
    let (scaled, vertical_shift, scale) = vertical_recenter_and_scale(&aligned, d)?;
    let verdict = filter_sequence(&scaled, filter)?;
    let mut rotation = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            rotation[r * 3 + c] = q[(r, c)];
        }
    }
    let report = NormalizationReport { shift: shift.into(), rotation, vertical_shift, scale, up, verdict };
    Ok((scaled, report))
}
