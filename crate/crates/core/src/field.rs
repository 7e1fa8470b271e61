//! Voxel radiance field stored before activation.
//!
//! Each voxel holds four raw values: density followed by RGB. Sampling
//! interpolates the raw values trilinearly and only then applies the
//! activations (softplus for density, sigmoid for color). Voxel values sit
//! at cell centers of an axis-aligned cube `[-half_extent, half_extent]^3`.
//! One ring of constant padding voxels surrounds the grid, so a query
//! outside the cube blends smoothly into empty space.

use crate::geometry::Vec3;

pub const CHANNELS: usize = 4;
pub const DEFAULT_SIDE: usize = 32;
/// Side length of the world-space cube covered by the grid.
pub const DEFAULT_WORLD_SIZE: f64 = 1.2;
pub const DEFAULT_DENSITY_BIAS: f64 = -2.0;
const NODE_SNAP: f64 = 1e-9;

/// Raw value seen outside the grid: empty, mid-grey before activation.
pub const PADDING_RAW: [f64; CHANNELS] = [-10.0, 0.0, 0.0, 0.0];

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`], clamped away from 0 and 1.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Inverse of [`softplus`] for positive targets.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    side: usize,
    half_extent: f64,
    density_bias: f64,
    values: Vec<f64>,
}

/// Activated field value at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub rgb: [f64; 3],
    /// Interpolated raw channels before activation.
    pub raw: [f64; CHANNELS],
}

/// The eight interpolation corners of a query point. `None` marks a padding voxel.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub voxels: [Option<usize>; 8],
    pub weights: [f64; 8],
}

impl VoxelGrid {
    /// Grid with every voxel set to `raw`.
    pub fn filled(side: usize, world_size: f64, raw: [f64; CHANNELS]) -> Self {
        assert!(side >= 1, "grid side must be positive");
        assert!(world_size > 0.0 && world_size.is_finite());
        let n = side * side * side;
        let mut values = Vec::with_capacity(n * CHANNELS);
        for _ in 0..n {
            values.extend_from_slice(&raw);
        }
        Self { side, half_extent: world_size / 2.0, density_bias: DEFAULT_DENSITY_BIAS, values }
    }

    /// All-zero raw values; with the default bias this renders nearly empty.
    pub fn zeros(side: usize, world_size: f64) -> Self {
        Self::filled(side, world_size, [0.0; CHANNELS])
    }

    pub fn from_values(side: usize, world_size: f64, values: Vec<f64>) -> Option<Self> {
        if values.len() != side * side * side * CHANNELS || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self { side, half_extent: world_size / 2.0, density_bias: DEFAULT_DENSITY_BIAS, values })
    }

    pub fn with_density_bias(mut self, bias: f64) -> Self {
        self.density_bias = bias;
        self
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn world_size(&self) -> f64 {
        2.0 * self.half_extent
    }

    pub fn density_bias(&self) -> f64 {
        self.density_bias
    }

    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half_extent / self.side as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Flat index of voxel `(x, y, z)`; storage is z-major, then y, then x, channel-last.
    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.side + y) * self.side + x
    }

    pub fn raw(&self, x: usize, y: usize, z: usize) -> [f64; CHANNELS] {
        let i = self.voxel_index(x, y, z) * CHANNELS;
        [self.values[i], self.values[i + 1], self.values[i + 2], self.values[i + 3]]
    }

    pub fn set_raw(&mut self, x: usize, y: usize, z: usize, raw: [f64; CHANNELS]) {
        let i = self.voxel_index(x, y, z) * CHANNELS;
        self.values[i..i + CHANNELS].copy_from_slice(&raw);
    }

    /// World position of the center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let c = |i: usize| -self.half_extent + (i as f64 + 0.5) * self.voxel_size();
        Vec3::new(c(x), c(y), c(z))
    }

    /// Interpolation corners and weights for a world point.
    pub fn stencil(&self, q: &Vec3) -> Stencil {
        let s = self.side as isize;
        let mut base = [0isize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let u = (q[axis] + self.half_extent) / self.voxel_size() - 0.5;
            // one padding voxel on each side: valid lattice is [-1, side]
            let u = if u.is_nan() { -1.0 } else { u.clamp(-1.0, s as f64) };
            // snap round-off so queries at voxel centers hit the node exactly
            let r = u.round();
            let u = if (u - r).abs() < NODE_SNAP { r } else { u };
            let i0 = (u.floor() as isize).min(s - 1);
            base[axis] = i0;
            frac[axis] = u - i0 as f64;
        }
        let mut voxels = [None; 8];
        let mut weights = [0.0; 8];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut inside = true;
            let mut idx = [0usize; 3];
            for axis in 0..3 {
                let i = base[axis] + off[axis] as isize;
                w *= if off[axis] == 1 { frac[axis] } else { 1.0 - frac[axis] };
                if i < 0 || i >= s {
                    inside = false;
                } else {
                    idx[axis] = i as usize;
                }
            }
            weights[corner] = w;
            if inside {
                voxels[corner] = Some(self.voxel_index(idx[0], idx[1], idx[2]));
            }
        }
        Stencil { voxels, weights }
    }

    /// Trilinearly interpolated raw channels.
    pub fn interpolate_raw(&self, q: &Vec3) -> [f64; CHANNELS] {
        self.interpolate_raw_with(&self.stencil(q))
    }

    pub fn sample(&self, q: &Vec3) -> FieldSample {
        self.sample_with(&self.stencil(q))
    }

    /// Accumulates the gradient of a scalar loss with respect to the raw
    /// voxel values, given upstream gradients on the activated outputs at `q`.
    pub fn sample_backward(&self, q: &Vec3, d_density: f64, d_rgb: [f64; 3], grad: &mut GradBuffer) {
        let st = self.stencil(q);
        let raw = self.interpolate_raw_with(&st);
        self.scatter(&st, &raw, d_density, d_rgb, grad);
    }

    pub(crate) fn interpolate_raw_with(&self, st: &Stencil) -> [f64; CHANNELS] {
        let mut raw = [0.0; CHANNELS];
        for (v, &w) in st.voxels.iter().zip(&st.weights) {
            if w == 0.0 {
                continue;
            }
            let src: &[f64] = match v {
                Some(i) => &self.values[i * CHANNELS..(i + 1) * CHANNELS],
                None => &PADDING_RAW,
            };
            for c in 0..CHANNELS {
                raw[c] += w * src[c];
            }
        }
        raw
    }

    pub(crate) fn sample_with(&self, st: &Stencil) -> FieldSample {
        let raw = self.interpolate_raw_with(st);
        FieldSample {
            density: softplus(raw[0] + self.density_bias),
            rgb: [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])],
            raw,
        }
    }

    pub(crate) fn scatter(&self, st: &Stencil, raw: &[f64; CHANNELS], d_density: f64, d_rgb: [f64; 3], grad: &mut GradBuffer) {
        // d softplus(x)/dx = sigmoid(x), d sigmoid(x)/dx = s(1 - s)
        let mut d_raw = [0.0; CHANNELS];
        d_raw[0] = d_density * sigmoid(raw[0] + self.density_bias);
        for c in 0..3 {
            let s = sigmoid(raw[c + 1]);
            d_raw[c + 1] = d_rgb[c] * s * (1.0 - s);
        }
        if d_raw.iter().all(|&g| g == 0.0) {
            return;
        }
        for (v, &w) in st.voxels.iter().zip(&st.weights) {
            if let Some(i) = v {
                if w != 0.0 {
                    let dst = &mut grad.values[i * CHANNELS..(i + 1) * CHANNELS];
                    for c in 0..CHANNELS {
                        dst[c] += w * d_raw[c];
                    }
                }
            }
        }
    }

    pub fn gradient_buffer(&self) -> GradBuffer {
        GradBuffer { values: vec![0.0; self.values.len()] }
    }
}

/// Gradient accumulator shaped like a grid's raw values.
///
/// Workers each own a buffer; buffers are merged in a fixed order so
/// results do not depend on scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    values: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.values.len(), other.values.len(), "gradient buffer size mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
