//! Emission-absorption ray casting through a [`VoxelGrid`], with an exact
//! reverse pass.
//!
//! Each ray is clipped to the grid's bounding cube and sampled at `n`
//! evenly spaced midpoints with spacing `delta`. With opacities
//! `alpha_k = 1 - exp(-density_k * delta)` and transmittance
//! `T_k = prod_{j<k} (1 - alpha_j)`, a pixel is
//! `sum_k T_k alpha_k c_k + T_n * background`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldSample, GradBuffer, Stencil, VoxelGrid};
use crate::geometry::{CameraPose, ImageSize, Ray};
use crate::imaging::Image;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("samples_per_ray must be at least 2, got {0}")]
    TooFewSamples(usize),
    #[error("near ({near}) must be below far ({far})")]
    BadRange { near: f64, far: f64 },
    #[error("{images} target images but {poses} poses and {weights} weights")]
    CountMismatch { images: usize, poses: usize, weights: usize },
    #[error("image is {got:?}, expected {expected:?}")]
    SizeMismatch { expected: ImageSize, got: ImageSize },
    #[error("no target views")]
    NoViews,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    /// Gradient partitions for the reverse pass. Results are bit-identical for
    /// a fixed value, whatever the thread pool size.
    pub workers: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { samples_per_ray: 64, near: 0.0, far: 1e3, background: [1.0, 1.0, 1.0], workers: 1 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.samples_per_ray < 2 {
            return Err(RenderError::TooFewSamples(self.samples_per_ray));
        }
        if !(self.near < self.far) {
            return Err(RenderError::BadRange { near: self.near, far: self.far });
        }
        Ok(())
    }

    pub fn with_background(mut self, rgb: [f64; 3]) -> Self {
        self.background = rgb;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples_per_ray = n;
        self
    }
}

/// Parametric sample positions of one ray after clipping to the grid.
#[derive(Debug, Clone, Copy)]
struct Span {
    start: f64,
    delta: f64,
}

fn clip(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> Option<Span> {
    let (t0, t1) = ray.intersect_cube(grid.half_extent())?;
    let near = t0.max(cfg.near);
    let far = t1.min(cfg.far);
    if !(near < far) {
        return None;
    }
    Some(Span { start: near, delta: (far - near) / cfg.samples_per_ray as f64 })
}

/// Per-sample compositing weights of one ray, plus the residual transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct RayWeights {
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub final_transmittance: f64,
}

pub fn ray_weights(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> RayWeights {
    let Some(span) = clip(grid, ray, cfg) else {
        return RayWeights { weights: Vec::new(), transmittance: Vec::new(), final_transmittance: 1.0 };
    };
    let mut weights = Vec::with_capacity(cfg.samples_per_ray);
    let mut transmittance = Vec::with_capacity(cfg.samples_per_ray);
    let mut t = 1.0;
    for k in 0..cfg.samples_per_ray {
        let s = grid.sample(&ray.at(span.start + (k as f64 + 0.5) * span.delta));
        let alpha = -(-s.density * span.delta).exp_m1();
        transmittance.push(t);
        weights.push(t * alpha);
        t *= 1.0 - alpha;
    }
    RayWeights { weights, transmittance, final_transmittance: t }
}

pub fn render_ray(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig) -> [f64; 3] {
    let Some(span) = clip(grid, ray, cfg) else {
        return cfg.background;
    };
    let mut rgb = [0.0; 3];
    let mut t = 1.0;
    for k in 0..cfg.samples_per_ray {
        let s = grid.sample(&ray.at(span.start + (k as f64 + 0.5) * span.delta));
        let alpha = -(-s.density * span.delta).exp_m1();
        let w = t * alpha;
        for c in 0..3 {
            rgb[c] += w * s.rgb[c];
        }
        t *= 1.0 - alpha;
    }
    for c in 0..3 {
        rgb[c] += t * cfg.background[c];
    }
    rgb
}

pub fn render(grid: &VoxelGrid, pose: &CameraPose, size: ImageSize, cfg: &RenderConfig) -> Image {
    let mut data = vec![0.0; size.pixels() * 3];
    data.par_chunks_mut(size.width * 3).enumerate().for_each(|(row, line)| {
        for col in 0..size.width {
            let rgb = render_ray(grid, &pose.ray_for_pixel(row, col, size), cfg);
            line[col * 3..col * 3 + 3].copy_from_slice(&rgb);
        }
    });
    Image::new(size, data).expect("buffer sized from image size")
}

struct MarchSample {
    stencil: Stencil,
    field: FieldSample,
    alpha: f64,
    /// Transmittance in front of the sample.
    front: f64,
}

/// Marches one ray, keeping every sample for a later reverse pass.
fn march(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig, scratch: &mut Vec<MarchSample>) -> Option<Span> {
    scratch.clear();
    let span = clip(grid, ray, cfg)?;
    let mut t = 1.0;
    for k in 0..cfg.samples_per_ray {
        let stencil = grid.stencil(&ray.at(span.start + (k as f64 + 0.5) * span.delta));
        let field = grid.sample_with(&stencil);
        let alpha = -(-field.density * span.delta).exp_m1();
        scratch.push(MarchSample { stencil, field, alpha, front: t });
        t *= 1.0 - alpha;
    }
    Some(span)
}

/// Pixel color of a marched ray; same arithmetic as [`render_ray`].
fn composite(samples: &[MarchSample], background: [f64; 3]) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let mut t = 1.0;
    for s in samples {
        let w = t * s.alpha;
        for c in 0..3 {
            rgb[c] += w * s.field.rgb[c];
        }
        t *= 1.0 - s.alpha;
    }
    for c in 0..3 {
        rgb[c] += t * background[c];
    }
    rgb
}

/// Reverse pass of one marched ray: accumulates `d pixel` into the grid gradient.
fn reverse(grid: &VoxelGrid, samples: &[MarchSample], span: Span, background: [f64; 3], d_pixel: [f64; 3], grad: &mut GradBuffer) {
    // `behind` is the color composited from everything after sample k,
    // normalized by the transmittance reaching k + 1.
    let mut behind = background;
    for s in samples.iter().rev() {
        let mut d_alpha = 0.0;
        let mut d_rgb = [0.0; 3];
        for c in 0..3 {
            d_rgb[c] = d_pixel[c] * s.front * s.alpha;
            d_alpha += d_pixel[c] * s.front * (s.field.rgb[c] - behind[c]);
        }
        let d_density = d_alpha * span.delta * (1.0 - s.alpha);
        grid.scatter(&s.stencil, &s.field.raw, d_density, d_rgb, grad);
        for c in 0..3 {
            behind[c] = s.alpha * s.field.rgb[c] + (1.0 - s.alpha) * behind[c];
        }
    }
}

fn ray_backward(grid: &VoxelGrid, ray: &Ray, cfg: &RenderConfig, d_pixel: [f64; 3], scratch: &mut Vec<MarchSample>, grad: &mut GradBuffer) {
    if d_pixel == [0.0; 3] {
        return;
    }
    if let Some(span) = march(grid, ray, cfg, scratch) {
        reverse(grid, scratch, span, cfg.background, d_pixel, grad);
    }
}

/// Runs `job` over pixel index ranges split into `workers` partitions, each
/// with its own gradient buffer, and merges the buffers in partition order.
/// Returns the per-partition outputs in order.
fn partitioned<F, T>(grid: &VoxelGrid, n: usize, workers: usize, grad: &mut GradBuffer, job: F) -> Vec<T>
where
    F: Fn(std::ops::Range<usize>, &mut GradBuffer) -> T + Sync,
    T: Send,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return vec![job(0..n, grad)];
    }
    let chunk = n.div_ceil(workers);
    let partials: Vec<(GradBuffer, T)> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut buf = grid.gradient_buffer();
            let out = job(w * chunk..((w + 1) * chunk).min(n), &mut buf);
            (buf, out)
        })
        .collect();
    partials
        .into_iter()
        .map(|(buf, out)| {
            grad.merge(&buf);
            out
        })
        .collect()
}

/// Gradient of a scalar loss with respect to the raw grid values, given the
/// loss gradient `d_image` on the rendered pixels.
pub fn render_backward(grid: &VoxelGrid, pose: &CameraPose, d_image: &Image, cfg: &RenderConfig) -> GradBuffer {
    let mut grad = grid.gradient_buffer();
    render_backward_into(grid, pose, d_image, cfg, &mut grad);
    grad
}

/// Like [`render_backward`], accumulating into an existing buffer.
pub fn render_backward_into(grid: &VoxelGrid, pose: &CameraPose, d_image: &Image, cfg: &RenderConfig, grad: &mut GradBuffer) {
    let size = d_image.size();
    partitioned(grid, size.pixels(), cfg.workers, grad, |range, buf| {
        let mut scratch = Vec::with_capacity(cfg.samples_per_ray);
        for p in range {
            let (row, col) = (p / size.width, p % size.width);
            let ray = pose.ray_for_pixel(row, col, size);
            ray_backward(grid, &ray, cfg, d_image.pixel(row, col), &mut scratch, buf);
        }
    });
}

/// One supervised view of a loss: a target image seen from `pose`, weighted.
#[derive(Debug, Clone, Copy)]
pub struct LossView<'a> {
    pub target: &'a Image,
    pub pose: &'a CameraPose,
    pub weight: f64,
}

/// Weighted photometric loss over views, and its gradient.
///
/// Each view contributes `weight * mean((render - target)^2)`. An unseen
/// view enters as one more [`LossView`] whose weight is the unseen-view
/// weight.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub per_view: Vec<f64>,
    pub renders: Vec<Image>,
    pub grad: GradBuffer,
}

pub fn render_loss(grid: &VoxelGrid, views: &[LossView<'_>], cfg: &RenderConfig) -> Result<LossEval, RenderError> {
    cfg.validate()?;
    let first = views.first().ok_or(RenderError::NoViews)?;
    let size = first.target.size();
    for v in views {
        if v.target.size() != size {
            return Err(RenderError::SizeMismatch { expected: size, got: v.target.size() });
        }
    }
    let mut grad = grid.gradient_buffer();
    let mut loss = 0.0;
    let mut per_view = Vec::with_capacity(views.len());
    let mut renders = Vec::with_capacity(views.len());
    let norm = (size.pixels() * 3) as f64;
    for v in views {
        // one march per ray serves both the forward pixel and its reverse pass
        let parts = partitioned(grid, size.pixels(), cfg.workers, &mut grad, |range, buf| {
            let mut scratch = Vec::with_capacity(cfg.samples_per_ray);
            let mut pixels = Vec::with_capacity(range.len() * 3);
            for p in range {
                let (row, col) = (p / size.width, p % size.width);
                let ray = v.pose.ray_for_pixel(row, col, size);
                let Some(span) = march(grid, &ray, cfg, &mut scratch) else {
                    pixels.extend_from_slice(&cfg.background);
                    continue;
                };
                let rgb = composite(&scratch, cfg.background);
                if v.weight != 0.0 {
                    let target = v.target.pixel(row, col);
                    let d_pixel = std::array::from_fn(|c| 2.0 * v.weight * (rgb[c] - target[c]) / norm);
                    reverse(grid, &scratch, span, cfg.background, d_pixel, buf);
                }
                pixels.extend_from_slice(&rgb);
            }
            pixels
        });
        let img = Image::new(size, parts.concat()).expect("one pixel per ray");
        let sq: f64 = img.data().iter().zip(v.target.data()).map(|(r, t)| (r - t) * (r - t)).sum();
        let mse = sq / norm;
        per_view.push(mse);
        loss += v.weight * mse;
        renders.push(img);
    }
    Ok(LossEval { loss, per_view, renders, grad })
}

/// Builds loss views from parallel slices, checking their lengths agree.
pub fn loss_views<'a>(images: &'a [Image], poses: &'a [CameraPose], weights: &[f64]) -> Result<Vec<LossView<'a>>, RenderError> {
    if images.len() != poses.len() || images.len() != weights.len() {
        return Err(RenderError::CountMismatch { images: images.len(), poses: poses.len(), weights: weights.len() });
    }
    Ok(images.iter().zip(poses).zip(weights).map(|((target, pose), &weight)| LossView { target, pose, weight }).collect())
}
