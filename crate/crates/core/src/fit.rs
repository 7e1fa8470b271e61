//! Direct voxel-grid fitting by Adam through the differentiable renderer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{min_snr_weight, unseen_weight, DiffusionError, NoiseSchedule, Viewset};
use crate::field::{VoxelGrid, CHANNELS, DEFAULT_SIDE, DEFAULT_WORLD_SIZE};
use crate::geometry::CameraPose;
use crate::imaging::Image;
use crate::metrics::psnr_from_mse;
use crate::renderer::{render_loss, LossView, RenderConfig, RenderError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("parameter and gradient lengths differ: {params} vs {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("invalid optimizer setting: {0}")]
    BadConfig(&'static str),
    #[error("fit diverged at iteration {iteration}: loss {loss} exceeded {factor}x the initial loss {initial} for {patience} iterations")]
    Diverged { iteration: usize, loss: f64, initial: f64, factor: f64, patience: usize, history: Vec<FitRecord> },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(FitError::BadConfig("step size must be positive"));
        }
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(FitError::BadConfig("decay rates must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(FitError::BadConfig("eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), FitError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(FitError::ShapeMismatch { params: params.len(), grads: grads.len() });
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.step as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Every target view has weight 1.
    Uniform,
    /// Each view is weighted by the Min-SNR-5 weight of its noise level.
    MinSnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub weight_mode: WeightMode,
    /// Unseen-view weight before scaling by the smallest view weight.
    pub lambda: f64,
    pub grid_side: usize,
    pub world_size: f64,
    /// Raw values every voxel starts from.
    pub init_raw: [f64; CHANNELS],
    pub render: RenderConfig,
    pub train_steps: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            adam: AdamConfig::default(),
            weight_mode: WeightMode::Uniform,
            lambda: 0.0,
            grid_side: DEFAULT_SIDE,
            world_size: DEFAULT_WORLD_SIZE,
            init_raw: [-5.0, 0.0, 0.0, 0.0],
            render: RenderConfig::default(),
            train_steps: 1000,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

/// Held-out view supervised with the unseen-view weight.
#[derive(Debug, Clone, Copy)]
pub struct UnseenView<'a> {
    pub image: &'a Image,
    pub pose: &'a CameraPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub iteration: usize,
    pub loss: f64,
    pub psnr_train: f64,
    pub psnr_unseen: Option<f64>,
}

impl FitRecord {
    /// Whitespace-separated `iter loss psnr_train psnr_unseen`, with `NaN`
    /// when there is no unseen view.
    pub fn to_line(&self) -> String {
        format!("{} {:.10e} {:.6} {:.6}", self.iteration, self.loss, self.psnr_train, self.psnr_unseen.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub grid: VoxelGrid,
    pub history: Vec<FitRecord>,
}

fn view_weights(targets: &Viewset, cfg: &FitConfig) -> Result<(Vec<f64>, f64), FitError> {
    match cfg.weight_mode {
        WeightMode::Uniform => Ok((vec![1.0; targets.len()], cfg.lambda)),
        WeightMode::MinSnr => {
            let schedule = NoiseSchedule::cosine(cfg.train_steps);
            let w = targets.noise_levels().iter().map(|&t| min_snr_weight(t, &schedule)).collect();
            let lambda_t = unseen_weight(cfg.lambda, targets.noise_levels(), &schedule)?;
            Ok((w, lambda_t))
        }
    }
}

/// Flags a run whose loss stays above `factor` times its first value for
/// `patience` consecutive observations, or turns non-finite.
#[derive(Debug, Clone)]
pub struct DivergenceMonitor {
    factor: f64,
    patience: usize,
    initial: Option<f64>,
    over: usize,
}

impl DivergenceMonitor {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, initial: None, over: 0 }
    }

    /// Records a loss; true once the run counts as diverged.
    pub fn observe(&mut self, loss: f64) -> bool {
        if !loss.is_finite() {
            return true;
        }
        let l0 = *self.initial.get_or_insert(loss);
        if loss > self.factor * l0 {
            self.over += 1;
        } else {
            self.over = 0;
        }
        self.over >= self.patience
    }
}

/// Fits a grid to the target views; see [`fit_grid_with`].
pub fn fit_grid(targets: &Viewset, unseen: Option<UnseenView<'_>>, cfg: &FitConfig) -> Result<FitResult, FitError> {
    fit_grid_with(targets, unseen, cfg, |_, _| {})
}

/// Fits a grid to the target views, calling `observe` after every update.
///
/// Iteration `i` of the history holds the loss of the grid before the
/// `i`-th update. The unseen view, when given, is rendered every iteration
/// for its PSNR and contributes to the loss with the unseen-view weight.
pub fn fit_grid_with<F>(targets: &Viewset, unseen: Option<UnseenView<'_>>, cfg: &FitConfig, mut observe: F) -> Result<FitResult, FitError>
where
    F: FnMut(&FitRecord, &VoxelGrid),
{
    cfg.adam.validate()?;
    cfg.render.validate()?;
    let (weights, lambda_t) = view_weights(targets, cfg)?;
    let mut views: Vec<LossView<'_>> =
        targets.images().iter().zip(targets.poses()).zip(&weights).map(|((target, pose), &weight)| LossView { target, pose, weight }).collect();
    if let Some(u) = unseen {
        views.push(LossView { target: u.image, pose: u.pose, weight: lambda_t });
    }
    let n_train = targets.len();

    let mut grid = VoxelGrid::filled(cfg.grid_side, cfg.world_size, cfg.init_raw);
    let mut state = AdamState::new(grid.values().len());
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut monitor = DivergenceMonitor::new(cfg.divergence_factor, cfg.divergence_patience);

    for iteration in 0..=cfg.iterations {
        let eval = render_loss(&grid, &views, &cfg.render)?;
        let train_mse = eval.per_view[..n_train].iter().sum::<f64>() / n_train as f64;
        let record = FitRecord {
            iteration,
            loss: eval.loss,
            psnr_train: psnr_from_mse(train_mse),
            psnr_unseen: unseen.map(|_| psnr_from_mse(eval.per_view[n_train])),
        };
        history.push(record);
        if monitor.observe(eval.loss) {
            return Err(FitError::Diverged {
                iteration,
                loss: eval.loss,
                initial: monitor.initial.unwrap_or(f64::NAN),
                factor: cfg.divergence_factor,
                patience: cfg.divergence_patience,
                history,
            });
        }
        if iteration == cfg.iterations {
            break;
        }
        adam_step(grid.values_mut(), eval.grad.values(), &mut state, &cfg.adam)?;
        observe(&record, &grid);
    }
    Ok(FitResult { grid, history })
}

/// Index of the highest score, the lowest index among ties. NaN scores
/// never win. Returns `None` for an empty slice.
pub fn best_of_k(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.or(if scores.is_empty() { None } else { Some(0) })
}
