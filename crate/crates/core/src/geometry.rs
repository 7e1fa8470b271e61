//! Pinhole cameras, pixel rays, projection and the per-pixel pose encoding.
//!
//! Conventions used throughout the crate:
//!
//! * `rotation`/`translation` map world points into the camera frame,
//!   `p_cam = R * p_world + T`.
//! * The camera looks down its local `-z` axis with `+x` right and `+y` up.
//! * Intrinsics live in normalized device coordinates, so the same camera
//!   can be rendered at any resolution without rescaling. NDC spans
//!   `[-1, 1]` on both image axes, `+y` towards the top row.
//! * Continuous pixel coordinates `(row, col)` place pixel centers on the
//!   integers: pixel `(r, c)` covers `[r - 0.5, r + 0.5) x [c - 0.5, c + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |R^T R - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation is a reflection (det = {0})")]
    NotProper(f64),
    #[error("focal lengths must be positive, got ({0}, {1})")]
    BadFocal(f64, f64),
    #[error("non-finite camera parameter")]
    NonFinite,
    #[error("degenerate look-at configuration")]
    DegenerateLookAt,
}

/// Pinhole intrinsics in normalized device coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::BadFocal(fx, fy));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Centered camera with equal focal lengths.
    pub fn symmetric(focal: f64) -> Self {
        Self { fx: focal, fy: focal, cx: 0.0, cy: 0.0 }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// World-to-camera extrinsics plus NDC intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Mat3,
    translation: Vec3,
    intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3, intrinsics: Intrinsics) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let dev = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if dev >= ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotProper(det));
        }
        let intrinsics = Intrinsics::new(intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)?;
        Ok(Self { rotation, translation, intrinsics })
    }

    /// Camera at `eye` looking at `target`, with `up` resolving the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        // camera +z points away from the target
        let z = -forward.normalize();
        let x = up.cross(&z);
        if x.norm() < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    /// Camera origin in world coordinates, `-R^T T`.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera axis `i` (0 = right, 1 = up, 2 = backward) expressed in world coordinates.
    pub fn axis_in_world(&self, i: usize) -> Vec3 {
        self.rotation.row(i).transpose()
    }

    /// Unit ray through the center of pixel `(row, col)`.
    pub fn ray_for_pixel(&self, row: usize, col: usize, size: ImageSize) -> Ray {
        self.ray_through(row as f64, col as f64, size)
    }

    /// Unit ray through continuous pixel coordinates (pixel centers on integers).
    pub fn ray_through(&self, row: f64, col: f64, size: ImageSize) -> Ray {
        let (x_ndc, y_ndc) = size.pixel_to_ndc(row, col);
        let k = &self.intrinsics;
        let dir_cam = Vec3::new((x_ndc - k.cx) / k.fx, (y_ndc - k.cy) / k.fy, -1.0);
        let direction = (self.rotation.transpose() * dir_cam).normalize();
        Ray { origin: self.camera_center(), direction }
    }

    /// Projects a world point to continuous pixel coordinates.
    pub fn project(&self, point: &Vec3, size: ImageSize) -> Projection {
        let p = self.world_to_camera(point);
        let depth = -p.z;
        if depth <= 0.0 {
            return Projection::BehindCamera;
        }
        let k = &self.intrinsics;
        let x_ndc = k.fx * p.x / depth + k.cx;
        let y_ndc = k.fy * p.y / depth + k.cy;
        let (row, col) = size.ndc_to_pixel(x_ndc, y_ndc);
        Projection::Visible { row, col, depth }
    }

    /// Per-pixel 6-channel encoding: camera origin followed by the unit
    /// world-space ray direction.
    pub fn pose_encode(&self, size: ImageSize) -> PoseMap {
        let origin = self.camera_center();
        let mut data = Vec::with_capacity(size.pixels() * 6);
        for row in 0..size.height {
            for col in 0..size.width {
                let ray = self.ray_for_pixel(row, col, size);
                data.extend_from_slice(&[origin.x, origin.y, origin.z]);
                data.extend_from_slice(&[ray.direction.x, ray.direction.y, ray.direction.z]);
            }
        }
        PoseMap { size, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

impl ImageSize {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn square(side: usize) -> Self {
        Self { height: side, width: side }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel_to_ndc(&self, row: f64, col: f64) -> (f64, f64) {
        let x = 2.0 * (col + 0.5) / self.width as f64 - 1.0;
        let y = 1.0 - 2.0 * (row + 0.5) / self.height as f64;
        (x, y)
    }

    pub fn ndc_to_pixel(&self, x_ndc: f64, y_ndc: f64) -> (f64, f64) {
        let col = (x_ndc + 1.0) * 0.5 * self.width as f64 - 0.5;
        let row = (1.0 - y_ndc) * 0.5 * self.height as f64 - 0.5;
        (row, col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Parametric interval where the ray is inside the box `[-half, half]^3`.
    pub fn intersect_cube(&self, half: f64) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = self.origin[axis];
            let d = self.direction[axis];
            if d.abs() < 1e-15 {
                if o < -half || o > half {
                    return None;
                }
                continue;
            }
            let a = (-half - o) / d;
            let b = (half - o) / d;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

/// Result of projecting a point; points at or behind the image plane are flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { row: f64, col: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn pixel(&self) -> Option<(f64, f64)> {
        match *self {
            Projection::Visible { row, col, .. } => Some((row, col)),
            Projection::BehindCamera => None,
        }
    }
}

/// H x W x 6 pose channels, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMap {
    pub size: ImageSize,
    pub data: Vec<f64>,
}

impl PoseMap {
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.size.width + col) * 6;
        &self.data[i..i + 6]
    }
}

/// Rotation by `angle` radians about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}
