//! Cyclic consistency loss, its gradient, and the moment-based optimizer.

use rand::seq::index::sample;
use serde::Serialize;

use super::blur::FrameBlur;
use super::{init_gaussians, LossNorm, RestoreConfig, RestoreState, LOGIT_BOUNDS, SCALE_BOUNDS};
use crate::error::{Error, Result};
use crate::gaussian2d::{rasterize, Gaussian2D, GaussianGrads, GaussianSet, RenderPass};
use crate::imgcore::Image;
use crate::kernelbasis::{sparsity_penalty, KernelBasis, RegionWeightField};
use crate::metrics::psnr;
use crate::turbsim::{stream, stream_rng};

const ADAM_EPS: f64 = 1e-12;

/// Source of the per-region blur weights. The optimizer asks for starting
/// values and, if the estimator is trainable, refines them by gradient
/// descent; a learned predictor can return fixed weights instead.
pub trait WeightEstimator {
    fn initial(&self, grid: (usize, usize), n_frames: usize, n_components: usize) -> Result<RegionWeightField>;
    fn trainable(&self) -> bool;
}

/// Start from zero weights (the principal kernel) and optimize them.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectWeights;

impl WeightEstimator for DirectWeights {
    fn initial(&self, grid: (usize, usize), n_frames: usize, n_components: usize) -> Result<RegionWeightField> {
        RegionWeightField::zeros(grid, n_frames, n_components)
    }

    fn trainable(&self) -> bool {
        true
    }
}

/// Known weights held constant during optimization.
#[derive(Debug, Clone)]
pub struct FixedWeights(pub RegionWeightField);

impl WeightEstimator for FixedWeights {
    fn initial(&self, grid: (usize, usize), n_frames: usize, n_components: usize) -> Result<RegionWeightField> {
        let f = &self.0;
        if f.grid() != grid || f.n_frames() != n_frames || f.n_components() != n_components {
            return Err(Error::DimensionMismatch(format!(
                "fixed weights are {}x{} x {} frames x {} components, need {}x{} x {} x {}",
                f.grid().0,
                f.grid().1,
                f.n_frames(),
                f.n_components(),
                grid.0,
                grid.1,
                n_frames,
                n_components
            )));
        }
        Ok(f.clone())
    }

    fn trainable(&self) -> bool {
        false
    }
}

/// Gradient of the cycle loss.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub gaussians: GaussianGrads,
    /// Same layout as [`RegionWeightField::data`].
    pub weights: Vec<f64>,
}

fn check_frames(frames: &[Image], set: &GaussianSet) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("restoration needs at least one frame".into()))?;
    for f in frames {
        first.ensure_same_shape(f)?;
    }
    if first.channels() != set.channels() {
        return Err(Error::DimensionMismatch(format!(
            "frames have {} channels, gaussians {}",
            first.channels(),
            set.channels()
        )));
    }
    Ok((first.width(), first.height()))
}

fn basis_for(basis: &KernelBasis, weights: &RegionWeightField) -> Result<KernelBasis> {
    if weights.n_components() > basis.n_components() {
        return Err(Error::DimensionMismatch(format!(
            "weights carry {} components, basis has only {}",
            weights.n_components(),
            basis.n_components()
        )));
    }
    Ok(basis.truncated(weights.n_components()))
}

/// Data term for one frame; with `scale = Some(s)` also returns `s` times its
/// gradient with respect to the Gaussians and the frame's weight row.
#[allow(clippy::too_many_arguments)]
fn frame_term(
    set: &GaussianSet,
    weights: &RegionWeightField,
    t: usize,
    basis: &KernelBasis,
    frame: &Image,
    norm: LossNorm,
    scale: Option<f64>,
) -> Result<(f64, Option<(GaussianGrads, Vec<f64>)>)> {
    let (w, h) = (frame.width(), frame.height());
    let blur = FrameBlur::new(set, weights, t, basis, w, h)?;
    let pass = RenderPass::forward(set, Some(&blur.per_gaussian), w, h)?;
    let pred = pass.color();
    let target = frame.data();
    let n = pred.len() as f64;
    let mut loss = 0.0;
    for (p, &q) in pred.iter().zip(target) {
        let r = p - q as f64;
        loss += match norm {
            LossNorm::L1 => r.abs(),
            LossNorm::L2 => r * r,
        };
    }
    loss /= n;
    let Some(s) = scale else {
        return Ok((loss, None));
    };
    let up: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, &q)| {
            let r = p - q as f64;
            s * match norm {
                LossNorm::L1 => {
                    if r > 0.0 {
                        1.0 / n
                    } else if r < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                LossNorm::L2 => 2.0 * r / n,
            }
        })
        .collect();
    let g = pass.backward(&up)?;
    let mut wg = vec![0.0; weights.regions() * weights.n_components()];
    blur.backward(&g, &mut wg);
    Ok((loss, Some((g, wg))))
}

/// `(1/N) sum_i |forward_blur(set, w_i) - frame_i| + lambda * sum |w|`,
/// with the norm chosen by `config.norm` (per-sample mean).
pub fn cycle_loss(frames: &[Image], state: &RestoreState, basis: &KernelBasis, config: &RestoreConfig) -> Result<f64> {
    check_frames(frames, &state.set)?;
    let basis = basis_for(basis, &state.weights)?;
    if state.weights.n_frames() != frames.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight frames for {} frames",
            state.weights.n_frames(),
            frames.len()
        )));
    }
    let mut data = 0.0;
    for (t, f) in frames.iter().enumerate() {
        data += frame_term(&state.set, &state.weights, t, &basis, f, config.norm, None)?.0;
    }
    Ok(data / frames.len() as f64 + sparsity_penalty(&state.weights, config.lambda))
}

/// Cycle loss and its full gradient. The Gaussian gradient is with respect to
/// the unconstrained parameters (log-scales, opacity logits).
pub fn cycle_loss_and_grad(
    frames: &[Image],
    state: &RestoreState,
    basis: &KernelBasis,
    config: &RestoreConfig,
) -> Result<(f64, LossGrads)> {
    check_frames(frames, &state.set)?;
    let basis = basis_for(basis, &state.weights)?;
    let n = frames.len() as f64;
    let mut g = GaussianGrads::zeros(state.set.len());
    let mut wg = vec![0.0; state.weights.data().len()];
    let row = state.weights.regions() * state.weights.n_components();
    let mut data = 0.0;
    for (t, f) in frames.iter().enumerate() {
        let (l, grads) = frame_term(&state.set, &state.weights, t, &basis, f, config.norm, Some(1.0 / n))?;
        let (gg, gw) = grads.expect("gradient requested");
        g.accumulate(&gg);
        wg[t * row..(t + 1) * row].copy_from_slice(&gw);
        data += l;
    }
    for (d, w) in wg.iter_mut().zip(state.weights.data()) {
        *d += config.lambda * w.signum();
    }
    Ok((data / n + sparsity_penalty(&state.weights, config.lambda), LossGrads { gaussians: g, weights: wg }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    /// Best loss seen so far.
    pub best: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub restored: Image,
    pub state: RestoreState,
    pub trace: Vec<TraceRow>,
}

/// Unconstrained parameters, one flat vector per learning-rate group.
struct Flat {
    channels: usize,
    mean: Vec<f64>,
    log_scale: Vec<f64>,
    rotation: Vec<f64>,
    logit: Vec<f64>,
    color: Vec<f64>,
}

impl Flat {
    fn from_set(set: &GaussianSet) -> Self {
        let ch = set.channels();
        let mut f = Flat {
            channels: ch,
            mean: Vec::with_capacity(2 * set.len()),
            log_scale: Vec::with_capacity(2 * set.len()),
            rotation: Vec::with_capacity(set.len()),
            logit: Vec::with_capacity(set.len()),
            color: Vec::with_capacity(ch * set.len()),
        };
        for g in &set.gaussians {
            f.mean.extend_from_slice(&g.mean);
            f.log_scale.extend(g.scale.iter().map(|s| s.ln()));
            f.rotation.push(g.rotation);
            let o = g.opacity.clamp(1e-6, 1.0 - 1e-6);
            f.logit.push((o / (1.0 - o)).ln());
            f.color.extend_from_slice(&g.color[..ch]);
        }
        f
    }

    fn to_set(&self) -> Result<GaussianSet> {
        let ch = self.channels;
        let gs = (0..self.rotation.len())
            .map(|i| {
                let mut color = [0.0; 3];
                color[..ch].copy_from_slice(&self.color[i * ch..(i + 1) * ch]);
                Gaussian2D {
                    mean: [self.mean[2 * i], self.mean[2 * i + 1]],
                    scale: [self.log_scale[2 * i].exp(), self.log_scale[2 * i + 1].exp()],
                    rotation: self.rotation[i],
                    opacity: 1.0 / (1.0 + (-self.logit[i]).exp()),
                    color,
                }
            })
            .collect();
        GaussianSet::with_gaussians(ch, gs)
    }

    fn project(&mut self) {
        let (lo, hi) = (SCALE_BOUNDS.0.ln(), SCALE_BOUNDS.1.ln());
        self.log_scale.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        self.logit.iter_mut().for_each(|v| *v = v.clamp(LOGIT_BOUNDS.0, LOGIT_BOUNDS.1));
        self.color.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    fn grads(&self, g: &GaussianGrads) -> [Vec<f64>; 5] {
        let ch = self.channels;
        [
            g.mean.iter().flatten().copied().collect(),
            g.log_scale.iter().flatten().copied().collect(),
            g.rotation.clone(),
            g.opacity_logit.clone(),
            g.color.iter().flat_map(|c| c[..ch].iter().copied()).collect(),
        ]
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected step on `p[range]` at step count `t >= 1`.
    #[allow(clippy::too_many_arguments)]
    fn step(&mut self, p: &mut [f64], g: &[f64], offset: usize, lr: f64, (b1, b2): (f64, f64), t: u64) {
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let m = &mut self.m[offset..offset + g.len()];
        let v = &mut self.v[offset..offset + g.len()];
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
        }
    }
}

/// Fit from one Gaussian per pixel of the temporal mean of `frames`, with
/// directly optimized weights.
pub fn optimize(frames: &[Image], basis: &KernelBasis, config: &RestoreConfig) -> Result<Optimized> {
    let init = init_gaussians(&Image::mean_of(frames)?)?;
    optimize_from(init, frames, basis, config, &DirectWeights, None)
}

/// Optimize `set` and the weights supplied by `estimator` against `frames`.
/// `truth`, when given, is scored into the trace every `psnr_every` steps and
/// at the end.
pub fn optimize_from(
    set: GaussianSet,
    frames: &[Image],
    basis: &KernelBasis,
    config: &RestoreConfig,
    estimator: &dyn WeightEstimator,
    truth: Option<&Image>,
) -> Result<Optimized> {
    config.validate()?;
    let (w, h) = check_frames(frames, &set)?;
    set.validate()?;
    let k = config.n_components.min(basis.n_components());
    let basis = basis.truncated(k);
    let grid = config.grid_for(w, h);
    let n = frames.len();
    let mut weights = estimator.initial(grid, n, k)?;
    let trainable = estimator.trainable();
    let row = weights.regions() * k;

    let mut flat = Flat::from_set(&set);
    let mut adam_g = [
        Adam::new(flat.mean.len()),
        Adam::new(flat.log_scale.len()),
        Adam::new(flat.rotation.len()),
        Adam::new(flat.logit.len()),
        Adam::new(flat.color.len()),
    ];
    let mut adam_w = Adam::new(weights.data().len());
    let mut frame_steps = vec![0u64; n];
    let lr = &config.lr;
    let lrs = [lr.mean, lr.log_scale, lr.rotation, lr.opacity_logit, lr.color];
    let batch = if config.batch_frames == 0 || config.batch_frames >= n {
        n
    } else {
        config.batch_frames
    };
    let mut rng = stream_rng(config.seed, stream::RESTORE, 0);

    let mut trace: Vec<TraceRow> = Vec::new();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut iteration = 0;
    while iteration < config.max_iters {
        let cur = flat.to_set()?;
        let mut picked: Vec<usize> = if batch == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, batch).into_vec()
        };
        picked.sort_unstable();
        let inv_b = 1.0 / batch as f64;
        let mut g = GaussianGrads::zeros(cur.len());
        let mut data = 0.0;
        let mut wrows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(batch);
        for &t in &picked {
            let (l, grads) = frame_term(&cur, &weights, t, &basis, &frames[t], config.norm, Some(inv_b))?;
            let (gg, mut gw) = grads.expect("gradient requested");
            g.accumulate(&gg);
            data += l * inv_b;
            // frame t carries N * lambda * |w_t| in the per-frame objective
            for (d, wv) in gw.iter_mut().zip(weights.frame(t)) {
                *d += inv_b * n as f64 * config.lambda * wv.signum();
            }
            wrows.push((t, gw));
        }
        let loss = data + sparsity_penalty(&weights, config.lambda);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {loss} at iteration {iteration}; lower the learning rates"
            )));
        }
        best = best.min(loss);
        history.push(loss);
        let score = match truth {
            Some(tr) if config.psnr_every > 0 && iteration % config.psnr_every == 0 => Some(psnr(&rasterize(&cur, w, h)?, tr)?),
            _ => None,
        };
        trace.push(TraceRow {
            iteration,
            loss,
            best,
            psnr: score,
        });

        let step = iteration as u64 + 1;
        let grads = flat.grads(&g);
        let groups: [&mut Vec<f64>; 5] = [
            &mut flat.mean,
            &mut flat.log_scale,
            &mut flat.rotation,
            &mut flat.logit,
            &mut flat.color,
        ];
        let n_groups = if config.optimize_color { 5 } else { 4 };
        for (((p, gr), a), &rate) in groups.into_iter().zip(&grads).zip(&mut adam_g).zip(&lrs).take(n_groups) {
            a.step(p, gr, 0, rate, config.betas, step);
        }
        flat.project();
        if trainable {
            for (t, gw) in &wrows {
                frame_steps[*t] += 1;
                let off = t * row;
                adam_w.step(weights.frame_mut(*t), gw, off, lr.weights, config.betas, frame_steps[*t]);
            }
            if config.project_weights {
                weights.project_nonnegative();
            }
        }
        iteration += 1;

        let wdw = config.convergence_window;
        if trace.len() > wdw {
            let prev = trace[trace.len() - 1 - wdw].best;
            if prev - best <= config.tolerance * prev.abs() {
                break;
            }
        }
    }

    let set = flat.to_set()?;
    let restored = rasterize(&set, w, h)?;
    if let (Some(tr), Some(last)) = (truth, trace.last_mut()) {
        last.psnr = Some(psnr(&restored, tr)?);
    }
    Ok(Optimized {
        restored,
        state: RestoreState {
            set,
            weights,
            iteration,
            loss_history: history,
        },
        trace,
    })
}
