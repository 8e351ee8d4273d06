//! Gaussian-splat restoration: initialize one Gaussian per pixel from the
//! tilt-corrected reference, then jointly fit the Gaussians and per-region
//! blur weights so that blurring the splat render reproduces every frame.

mod blur;
mod optim;
mod pipeline;

pub use blur::forward_blur;
pub use optim::{
    cycle_loss, cycle_loss_and_grad, optimize, optimize_from, DirectWeights, FixedWeights, LossGrads, Optimized,
    TraceRow, WeightEstimator,
};
pub use pipeline::{restore_sequence, RestoreOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian2d::{Gaussian2D, GaussianSet};
use crate::imgcore::Image;
use crate::kernelbasis::RegionWeightField;
use crate::tiltcorrect::{FlowConfig, Reference};

pub const INIT_SCALE: f64 = 0.7;
pub const INIT_OPACITY: f64 = 0.9;
/// Bounds applied to scales after every step, px.
pub const SCALE_BOUNDS: (f64, f64) = (0.3, 8.0);
/// Bounds applied to opacity logits after every step.
pub const LOGIT_BOUNDS: (f64, f64) = (-8.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    /// Mean absolute difference.
    #[default]
    L1,
    /// Mean squared difference.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: f64,
    pub weights: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1e-2,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity_logit: 5e-2,
            color: 1e-2,
            weights: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreConfig {
    pub max_iters: usize,
    pub convergence_window: usize,
    pub tolerance: f64,
    pub lr: LearningRates,
    pub betas: (f64, f64),
    /// Sparsity weight on the region blur weights.
    pub lambda: f64,
    /// `(gw, gh)` region counts; `None` means 16 px patches.
    pub region_grid: Option<(usize, usize)>,
    /// Basis components used (the basis is truncated to this many).
    pub n_components: usize,
    pub seed: u64,
    pub norm: LossNorm,
    /// Frames per optimizer step; 0 uses every frame.
    pub batch_frames: usize,
    /// Clamp weights at zero after every step.
    pub project_weights: bool,
    /// Optimize Gaussian colours; off keeps them at their initial values.
    pub optimize_color: bool,
    /// Evaluate PSNR against ground truth every this many iterations (0 = never).
    pub psnr_every: usize,
    /// Set from the tilt-correction section of a config file.
    #[serde(skip)]
    pub reference: Reference,
    #[serde(skip)]
    pub flow: FlowConfig,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            convergence_window: 50,
            tolerance: 1e-4,
            lr: LearningRates::default(),
            betas: (0.9, 0.999),
            lambda: 1e-3,
            region_grid: None,
            n_components: 100,
            seed: 0,
            norm: LossNorm::L1,
            batch_frames: 2,
            project_weights: true,
            optimize_color: true,
            psnr_every: 0,
            reference: Reference::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// Region counts for 16 px patches, rounding up.
pub fn default_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(16).max(1), height.div_ceil(16).max(1))
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        for (name, v) in [
            ("lr.mean", lr.mean),
            ("lr.log_scale", lr.log_scale),
            ("lr.rotation", lr.rotation),
            ("lr.opacity_logit", lr.opacity_logit),
            ("lr.color", lr.color),
            ("lr.weights", lr.weights),
            ("tolerance", self.tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::InvalidArgument(format!("betas ({b1}, {b2}) must lie in [0, 1)")));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidArgument("convergence_window must be at least 1".into()));
        }
        if let Some((gw, gh)) = self.region_grid {
            if gw == 0 || gh == 0 {
                return Err(Error::InvalidArgument("region grid must be non-empty".into()));
            }
        }
        self.flow.validate()
    }

    pub fn grid_for(&self, width: usize, height: usize) -> (usize, usize) {
        self.region_grid.unwrap_or_else(|| default_grid(width, height))
    }
}

/// Parameters being optimized plus the loss history.
#[derive(Debug, Clone)]
pub struct RestoreState {
    pub set: GaussianSet,
    pub weights: RegionWeightField,
    pub iteration: usize,
    pub loss_history: Vec<f64>,
}

/// One Gaussian per pixel, centred on it, with the pixel's colour.
pub fn init_gaussians(base: &Image) -> Result<GaussianSet> {
    let (w, h, ch) = (base.width(), base.height(), base.channels());
    let mut gs = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut color = [0.0; 3];
            for (c, v) in color.iter_mut().enumerate().take(ch) {
                *v = base.get(x, y, c) as f64;
            }
            gs.push(Gaussian2D {
                mean: [x as f64, y as f64],
                scale: [INIT_SCALE; 2],
                rotation: 0.0,
                opacity: INIT_OPACITY,
                color,
            });
        }
    }
    GaussianSet::with_gaussians(ch, gs)
}
