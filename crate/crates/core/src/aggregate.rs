//! Lifting per-view feature maps into a shared voxel volume, and fusing
//! the per-view volumes voxel by voxel.

use std::cmp::Ordering;

use thiserror::Error;

use crate::geometry::{CameraPose, ImageSize, Projection, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("no views to aggregate")]
    NoViews,
    #[error("volume dims {got:?} differ from {expected:?}")]
    DimsMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("buffer of length {got} does not match dims (expected {expected})")]
    BadLength { expected: usize, got: usize },
}

/// Rounds coordinates within projection round-off of a pixel center onto it.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// C x H x W feature map, channel-first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    size: ImageSize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, size: ImageSize, data: Vec<f64>) -> Result<Self, AggregateError> {
        let expected = channels * size.pixels();
        if data.len() != expected {
            return Err(AggregateError::BadLength { expected, got: data.len() });
        }
        Ok(Self { channels, size, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.size.height + row) * self.size.width + col]
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers on
    /// integers). Locations outside the image area return `false`; inside it,
    /// the lattice is clamped to the border pixels.
    pub fn bilinear(&self, row: f64, col: f64, out: &mut [f64]) -> bool {
        let (h, w) = (self.size.height as f64, self.size.width as f64);
        if !(row >= -0.5 && row <= h - 0.5 && col >= -0.5 && col <= w - 0.5) {
            return false;
        }
        let r = snap(row.clamp(0.0, h - 1.0));
        let c = snap(col.clamp(0.0, w - 1.0));
        let r0 = (r.floor() as usize).min(self.size.height.saturating_sub(2));
        let c0 = (c.floor() as usize).min(self.size.width.saturating_sub(2));
        let r1 = (r0 + 1).min(self.size.height - 1);
        let c1 = (c0 + 1).min(self.size.width - 1);
        let fr = r - r0 as f64;
        let fc = c - c0 as f64;
        for (ch, o) in out.iter_mut().enumerate().take(self.channels) {
            let mut v = 0.0;
            for (ri, wr) in [(r0, 1.0 - fr), (r1, fr)] {
                if wr == 0.0 {
                    continue;
                }
                for (ci, wc) in [(c0, 1.0 - fc), (c1, fc)] {
                    if wc == 0.0 {
                        continue;
                    }
                    v += wr * wc * self.at(ch, ri, ci);
                }
            }
            *o = v;
        }
        true
    }
}

/// Cubic voxel layout shared by unprojected volumes and radiance grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub side: usize,
    pub world_size: f64,
}

impl GridSpec {
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let h = self.world_size / 2.0;
        let v = self.world_size / self.side as f64;
        let c = |i: usize| -h + (i as f64 + 0.5) * v;
        Vec3::new(c(x), c(y), c(z))
    }
}

/// C channels over an S^3 voxel lattice, stored z-major then y, x, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    channels: usize,
    side: usize,
    values: Vec<f64>,
}

impl FeatureVolume {
    pub fn zeros(channels: usize, side: usize) -> Self {
        Self { channels, side, values: vec![0.0; channels * side * side * side] }
    }

    pub fn from_values(channels: usize, side: usize, values: Vec<f64>) -> Result<Self, AggregateError> {
        let expected = channels * side * side * side;
        if values.len() != expected {
            return Err(AggregateError::BadLength { expected, got: values.len() });
        }
        Ok(Self { channels, side, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.channels, self.side)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn voxel(&self, x: usize, y: usize, z: usize) -> &[f64] {
        let i = ((z * self.side + y) * self.side + x) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn voxel_mut(&mut self, x: usize, y: usize, z: usize) -> &mut [f64] {
        let i = ((z * self.side + y) * self.side + x) * self.channels;
        &mut self.values[i..i + self.channels]
    }

    fn voxels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.channels)
    }
}

/// Fills a volume by projecting each voxel center into the view and
/// bilinearly sampling the feature map there. Voxels behind the camera or
/// outside the image hold zeros.
pub fn unproject(map: &FeatureMap, pose: &CameraPose, spec: GridSpec) -> FeatureVolume {
    let mut vol = FeatureVolume::zeros(map.channels(), spec.side);
    for z in 0..spec.side {
        for y in 0..spec.side {
            for x in 0..spec.side {
                let q = spec.voxel_center(x, y, z);
                if let Projection::Visible { row, col, .. } = pose.project(&q, map.size()) {
                    let out = vol.voxel_mut(x, y, z);
                    if !map.bilinear(row, col, out) {
                        out.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }
    vol
}

fn check_dims(reference: (usize, usize), vols: &[FeatureVolume]) -> Result<(), AggregateError> {
    for v in vols {
        if v.dims() != reference {
            return Err(AggregateError::DimsMismatch { expected: reference, got: v.dims() });
        }
    }
    Ok(())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Single-head dot-product attention across views, independently at each
/// voxel, with a residual connection to the query.
///
/// Keys and values are the per-view features. Scores are
/// `<q, k_i> / sqrt(C)`, normalized with a softmax over views. The views of
/// a voxel are put in a canonical order before any summation, so the result
/// does not depend on the order of `features` down to the last bit.
pub fn attend(query: &FeatureVolume, features: &[FeatureVolume]) -> Result<FeatureVolume, AggregateError> {
    if features.is_empty() {
        return Err(AggregateError::NoViews);
    }
    check_dims(query.dims(), features)?;
    let c = query.channels();
    let scale = 1.0 / (c as f64).sqrt();
    let n = features.len();
    let mut out = FeatureVolume::zeros(c, query.side());
    let mut views: Vec<&[f64]> = Vec::with_capacity(n);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (voxel, (q, o)) in query.voxels().zip(out.values.chunks_exact_mut(c)).enumerate() {
        views.clear();
        views.extend(features.iter().map(|f| &f.values[voxel * c..(voxel + 1) * c]));
        scored.clear();
        scored.extend(views.iter().enumerate().map(|(i, v)| (q.iter().zip(*v).map(|(a, b)| a * b).sum::<f64>() * scale, i)));
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lexicographic(views[a.1], views[b.1])));
        let max = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scored.iter().map(|s| (s.0 - max).exp()).sum();
        // weighted mean written as an offset from the first canonical view,
        // so identical views reproduce their value exactly
        let reference = views[scored[0].1];
        for ch in 0..c {
            let mut acc = 0.0;
            for &(s, i) in &scored[1..] {
                acc += (s - max).exp() / denom * (views[i][ch] - reference[ch]);
            }
            o[ch] = (reference[ch] + acc) + q[ch];
        }
    }
    Ok(out)
}

/// Voxel-wise arithmetic mean of the per-view volumes.
pub fn mean_pool(features: &[FeatureVolume]) -> Result<FeatureVolume, AggregateError> {
    let first = features.first().ok_or(AggregateError::NoViews)?;
    check_dims(first.dims(), features)?;
    let n = features.len() as f64;
    let mut out = first.clone();
    for (i, o) in out.values.iter_mut().enumerate() {
        let reference = first.values[i];
        let acc: f64 = features[1..].iter().map(|f| f.values[i] - reference).sum();
        *o = reference + acc / n;
    }
    Ok(out)
}
