//! Viewset diffusion: cosine noise schedule, per-view noising, Min-SNR
//! loss weights and deterministic DDIM sampling in the `x0` parameterization.
//!
//! A viewset is noised view by view. Every view carries its own timestep,
//! and timestep 0 marks a clean conditioning view that is never modified.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::field::VoxelGrid;
use crate::geometry::{CameraPose, ImageSize, PoseMap};
use crate::imaging::Image;
use crate::renderer::{render, RenderConfig};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_INFERENCE_STEPS: usize = 250;
/// Upper bound of the Min-SNR weight.
pub const MIN_SNR_CAP: f64 = 5.0;
const COSINE_OFFSET: f64 = 0.008;
const MIN_STEP_RATIO: f64 = 0.001;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("viewset is empty")]
    EmptyViewset,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("image size mismatch in view {0}")]
    SizeMismatch(usize),
    #[error("timestep {t} outside schedule of {steps} steps")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("DDIM step must go backwards in time, got t = {t}, t_prev = {t_prev}")]
    NotDecreasing { t: usize, t_prev: usize },
    #[error("inference steps ({inference}) must divide into 1..={train} training steps")]
    BadInferenceSteps { inference: usize, train: usize },
    #[error("clean view index {0} out of range")]
    BadCleanIndex(usize),
    #[error("denoiser failed: {0}")]
    Denoiser(String),
}

/// Per-timestep signal level `alpha_bar` and noise level `sigma = sqrt(1 - alpha_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule over `steps` timesteps.
    ///
    /// `alpha_bar(t) = f(t) / f(0)` with `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`,
    /// `s = 0.008`. Consecutive ratios `alpha_bar(t) / alpha_bar(t-1)` are
    /// clipped to at least 0.001, which keeps the final step finite.
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for t in 1..=steps {
            let ratio = (f(t) / f(t - 1)).max(MIN_STEP_RATIO);
            let prev = alpha_bar[t - 1];
            alpha_bar.push(prev * ratio);
        }
        debug_assert!((alpha_bar[1] - f(1) / f0).abs() < 1e-12);
        Self { alpha_bar }
    }

    /// Number of diffusion steps `T`; valid timesteps are `0..=T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// Signal-to-noise ratio `(1 - sigma^2) / sigma^2`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        snr_from_sigma(self.sigma(t))
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t > self.steps() {
            return Err(DiffusionError::TimestepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(DEFAULT_TRAIN_STEPS)
    }
}

pub fn snr_from_sigma(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (1.0 - s2) / s2
}

/// `min(SNR, 5)`; a clean view (`sigma = 0`) gets the cap.
pub fn min_snr_weight_for_sigma(sigma: f64) -> f64 {
    if sigma == 0.0 {
        return MIN_SNR_CAP;
    }
    snr_from_sigma(sigma).min(MIN_SNR_CAP)
}

pub fn min_snr_weight(t: usize, schedule: &NoiseSchedule) -> f64 {
    min_snr_weight_for_sigma(schedule.sigma(t))
}

/// Unseen-view weight `lambda * min_i w(sigma_i)` over the viewset's timesteps.
pub fn unseen_weight(lambda: f64, timesteps: &[usize], schedule: &NoiseSchedule) -> Result<f64, DiffusionError> {
    if timesteps.is_empty() {
        return Err(DiffusionError::EmptyViewset);
    }
    let mut w = f64::INFINITY;
    for &t in timesteps {
        schedule.check(t)?;
        w = w.min(min_snr_weight(t, schedule));
    }
    Ok(lambda * w)
}

/// N posed images, each with its own noise timestep (0 = clean).
#[derive(Debug, Clone, PartialEq)]
pub struct Viewset {
    images: Vec<Image>,
    poses: Vec<CameraPose>,
    noise_levels: Vec<usize>,
    pose_channels: Option<Vec<PoseMap>>,
}

impl Viewset {
    pub fn new(images: Vec<Image>, poses: Vec<CameraPose>, noise_levels: Vec<usize>) -> Result<Self, DiffusionError> {
        if images.is_empty() {
            return Err(DiffusionError::EmptyViewset);
        }
        let n = images.len();
        if poses.len() != n {
            return Err(DiffusionError::LengthMismatch { what: "poses", expected: n, got: poses.len() });
        }
        if noise_levels.len() != n {
            return Err(DiffusionError::LengthMismatch { what: "noise_levels", expected: n, got: noise_levels.len() });
        }
        let size = images[0].size();
        if let Some(i) = images.iter().position(|im| im.size() != size) {
            return Err(DiffusionError::SizeMismatch(i));
        }
        Ok(Self { images, poses, noise_levels, pose_channels: None })
    }

    /// All views clean.
    pub fn clean(images: Vec<Image>, poses: Vec<CameraPose>) -> Result<Self, DiffusionError> {
        let n = images.len();
        Self::new(images, poses, vec![0; n])
    }

    /// Attaches the per-pixel pose encoding of every view.
    pub fn with_pose_channels(mut self) -> Self {
        let size = self.image_size();
        self.pose_channels = Some(self.poses.iter().map(|p| p.pose_encode(size)).collect());
        self
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_size(&self) -> ImageSize {
        self.images[0].size()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn noise_levels(&self) -> &[usize] {
        &self.noise_levels
    }

    pub fn pose_channels(&self) -> Option<&[PoseMap]> {
        self.pose_channels.as_deref()
    }

    pub fn is_clean(&self, i: usize) -> bool {
        self.noise_levels[i] == 0
    }

    pub fn into_images(self) -> Vec<Image> {
        self.images
    }
}

/// `sqrt(1 - sigma^2) * x + sigma * eps`, element-wise.
pub fn noise_image(x: &Image, sigma: f64, eps: &Image) -> Image {
    assert_eq!(x.size(), eps.size(), "noise must match image size");
    let a = (1.0 - sigma * sigma).sqrt();
    let data = x.data().iter().zip(eps.data()).map(|(&v, &e)| a * v + sigma * e).collect();
    Image::new(x.size(), data).expect("same size")
}

pub fn gaussian_image<R: Rng + ?Sized>(size: ImageSize, rng: &mut R) -> Image {
    let data = (0..size.pixels() * 3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Image::new(size, data).expect("sized")
}

/// Noises the views selected by `mask` to timestep `t`. `eps` holds one
/// noise image per selected view, in view order. Unselected views are
/// returned untouched.
pub fn noise_viewset(vs: &Viewset, t: usize, mask: &[bool], eps: &[Image], schedule: &NoiseSchedule) -> Result<Viewset, DiffusionError> {
    schedule.check(t)?;
    if mask.len() != vs.len() {
        return Err(DiffusionError::LengthMismatch { what: "mask", expected: vs.len(), got: mask.len() });
    }
    let selected = mask.iter().filter(|&&m| m).count();
    if eps.len() != selected {
        return Err(DiffusionError::LengthMismatch { what: "eps", expected: selected, got: eps.len() });
    }
    let size = vs.image_size();
    let sigma = schedule.sigma(t);
    let mut out = vs.clone();
    let mut noise = eps.iter();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let e = noise.next().expect("counted above");
        if e.size() != size {
            return Err(DiffusionError::SizeMismatch(i));
        }
        out.images[i] = noise_image(&vs.images[i], sigma, e);
        out.noise_levels[i] = t;
    }
    Ok(out)
}

/// Noise arrangements used when building a training viewset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseState {
    /// One view, noised.
    OneNoised,
    /// Two views, both noised to the same level.
    TwoNoised,
    /// Two views: one noised, one clean.
    NoisedAndClean,
}

impl NoiseState {
    pub const ALL: [NoiseState; 3] = [NoiseState::OneNoised, NoiseState::TwoNoised, NoiseState::NoisedAndClean];

    /// Per-view timesteps for this state at noise level `t`.
    pub fn noise_levels(self, t: usize) -> Vec<usize> {
        match self {
            NoiseState::OneNoised => vec![t],
            NoiseState::TwoNoised => vec![t, t],
            NoiseState::NoisedAndClean => vec![t, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStateSampler {
    probabilities: [f64; 3],
}

impl Default for NoiseStateSampler {
    fn default() -> Self {
        Self { probabilities: [0.45, 0.45, 0.1] }
    }
}

impl NoiseStateSampler {
    pub fn new(probabilities: [f64; 3]) -> Option<Self> {
        let sum: f64 = probabilities.iter().sum();
        (probabilities.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() < 1e-12).then_some(Self { probabilities })
    }

    pub fn probabilities(&self) -> [f64; 3] {
        self.probabilities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseState {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (state, p) in NoiseState::ALL.iter().zip(self.probabilities) {
            acc += p;
            if u < acc {
                return *state;
            }
        }
        NoiseState::ALL[2]
    }

    /// Draws a timestep uniformly from `1..=T` and a noise state, returning
    /// per-view timesteps for the network's input views.
    pub fn sample_levels<R: Rng + ?Sized>(&self, rng: &mut R, schedule: &NoiseSchedule) -> (NoiseState, Vec<usize>) {
        let t = rng.random_range(1..=schedule.steps());
        let state = self.sample(rng);
        (state, state.noise_levels(t))
    }
}

/// Deterministic DDIM update of one image from `t` to `t_prev`, given the
/// denoiser's clean estimate.
pub fn ddim_step(x_t: &Image, x0_hat: &Image, t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Result<Image, DiffusionError> {
    schedule.check(t)?;
    if t_prev >= t {
        return Err(DiffusionError::NotDecreasing { t, t_prev });
    }
    if x_t.size() != x0_hat.size() {
        return Err(DiffusionError::SizeMismatch(0));
    }
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t_prev);
    let (sa_t, s1_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let (sa_prev, s1_prev) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(x0_hat.data())
        .map(|(&x, &x0)| {
            let eps = (x - sa_t * x0) / s1_t;
            sa_prev * x0 + s1_prev * eps
        })
        .collect();
    Ok(Image::new(x_t.size(), data).expect("same size"))
}

/// Evenly strided timesteps from `T` down to 0: `n + 1` entries, the first
/// `T` and the last 0.
pub fn inference_timesteps(train_steps: usize, inference_steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if inference_steps == 0 || inference_steps > train_steps || train_steps % inference_steps != 0 {
        return Err(DiffusionError::BadInferenceSteps { inference: inference_steps, train: train_steps });
    }
    let stride = train_steps / inference_steps;
    Ok((0..=inference_steps).rev().map(|k| k * stride).collect())
}

/// Maps a viewset with per-view timesteps to a radiance field.
pub trait Denoiser {
    fn denoise(&self, viewset: &Viewset, timesteps: &[usize]) -> Result<VoxelGrid, DiffusionError>;
}

impl<F> Denoiser for F
where
    F: Fn(&Viewset, &[usize]) -> Result<VoxelGrid, DiffusionError>,
{
    fn denoise(&self, viewset: &Viewset, timesteps: &[usize]) -> Result<VoxelGrid, DiffusionError> {
        self(viewset, timesteps)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    pub image_size: ImageSize,
    pub render: RenderConfig,
    pub pose_channels: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            inference_steps: DEFAULT_INFERENCE_STEPS,
            image_size: ImageSize::square(48),
            render: RenderConfig::default(),
            pose_channels: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub grid: VoxelGrid,
    pub viewset: Viewset,
    /// Timesteps visited, starting at `T` and ending at 0.
    pub timesteps: Vec<usize>,
}

/// Progressive denoising of a viewset.
///
/// Views listed in `clean` are conditioning views and stay bit-identical;
/// every other view of `poses` starts from unit Gaussian noise. At each
/// strided timestep the denoiser's grid is rendered into the noised
/// viewpoints as the clean estimate, followed by one DDIM step.
/// `observer` sees the viewset after every step.
pub fn sample_loop<D, R, O>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    poses: &[CameraPose],
    clean: &[(usize, Image)],
    rng: &mut R,
    mut observer: O,
) -> Result<SampleOutput, DiffusionError>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
    O: FnMut(usize, &Viewset),
{
    if poses.is_empty() {
        return Err(DiffusionError::EmptyViewset);
    }
    let n = poses.len();
    let size = cfg.image_size;
    let mut is_clean = vec![false; n];
    for (i, img) in clean {
        if *i >= n || is_clean[*i] {
            return Err(DiffusionError::BadCleanIndex(*i));
        }
        if img.size() != size {
            return Err(DiffusionError::SizeMismatch(*i));
        }
        is_clean[*i] = true;
    }
    let timesteps = inference_timesteps(schedule.steps(), cfg.inference_steps)?;
    let t_start = timesteps[0];

    let mut images: Vec<Image> = Vec::with_capacity(n);
    for i in 0..n {
        match clean.iter().find(|(j, _)| *j == i) {
            Some((_, img)) => images.push(img.clone()),
            None => images.push(gaussian_image(size, rng)),
        }
    }
    let levels: Vec<usize> = is_clean.iter().map(|&c| if c { 0 } else { t_start }).collect();
    let mut viewset = Viewset::new(images, poses.to_vec(), levels)?;
    if cfg.pose_channels {
        viewset = viewset.with_pose_channels();
    }

    let mut grid = None;
    for (step, pair) in timesteps.windows(2).enumerate() {
        let (t, t_prev) = (pair[0], pair[1]);
        let g = denoiser.denoise(&viewset, &viewset.noise_levels)?;
        for i in 0..n {
            if is_clean[i] {
                continue;
            }
            let x0_hat = render(&g, &poses[i], size, &cfg.render);
            viewset.images[i] = ddim_step(&viewset.images[i], &x0_hat, t, t_prev, schedule)?;
            viewset.noise_levels[i] = t_prev;
        }
        grid = Some(g);
        observer(step, &viewset);
    }
    Ok(SampleOutput { grid: grid.expect("at least one step"), viewset, timesteps })
}
