//! Coarse-to-fine Horn-Schunck optical flow with warping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::filter::{bilinear, downsample2, gaussian_blur};
use crate::imgcore::{FlowField, Image};

/// Coarsest pyramid level is never made smaller than this.
const MIN_LEVEL_SIZE: usize = 8;
/// Inner iterations between re-warps of the reference.
const WARP_EVERY: usize = 20;
const PRESMOOTH_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    /// Iterations per pyramid level.
    pub iterations: usize,
    /// Smoothness weight in 8-bit intensity units; divided by 255 before use
    /// on unit-range images.
    pub smoothness: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            iterations: 100,
            smoothness: 15.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument("flow needs at least one level and one iteration".into()));
        }
        if !(self.smoothness > 0.0) || !self.smoothness.is_finite() {
            return Err(Error::InvalidArgument(format!("flow smoothness must be positive, got {}", self.smoothness)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// Set when either input is flat, so the flow carries no information.
    pub unreliable: bool,
}

struct Plane {
    data: Vec<f64>,
    w: usize,
    h: usize,
}

fn variance(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let m = p.iter().sum::<f64>() / n;
    p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.w.min(last.h) / 2 < MIN_LEVEL_SIZE {
            break;
        }
        let (d, w, h) = downsample2(&last.data, last.w, last.h);
        out.push(Plane { data: d, w, h });
    }
    out
}

fn upsample_flow(u: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            // fine pixel centre in coarse coordinates
            let cx = (x as f64 + 0.5) * sx - 0.5;
            let cy = (y as f64 + 0.5) * sy - 0.5;
            out[y * nw + x] = bilinear(u, w, h, cx, cy);
        }
    }
    out
}

fn neighbour_average(u: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let at = |x: isize, y: isize| u[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1);
            let diag = at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = edge / 6.0 + diag / 12.0;
        }
    }
}

/// Refine `(u, v)` at one level so that `reference(p + f) ~ target(p)`.
fn refine_level(reference: &Plane, target: &Plane, u: &mut [f64], v: &mut [f64], iterations: usize, alpha2: f64) {
    let (w, h) = (reference.w, reference.h);
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    let mut ubar = vec![0.0; n];
    let mut vbar = vec![0.0; n];
    let mut done = 0;
    while done < iterations {
        // linearize around the current flow
        let (u0, v0) = (u.to_vec(), v.to_vec());
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f64 + u0[i], y as f64 + v0[i]);
                let warped = bilinear(&reference.data, w, h, sx, sy);
                ix[i] = 0.5 * (bilinear(&reference.data, w, h, sx + 1.0, sy) - bilinear(&reference.data, w, h, sx - 1.0, sy));
                iy[i] = 0.5 * (bilinear(&reference.data, w, h, sx, sy + 1.0) - bilinear(&reference.data, w, h, sx, sy - 1.0));
                it[i] = warped - target.data[i];
            }
        }
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        let steps = WARP_EVERY.min(iterations - done);
        for _ in 0..steps {
            // smoothness acts on the total flow u0 + du
            let tu: Vec<f64> = u0.iter().zip(&du).map(|(a, b)| a + b).collect();
            let tv: Vec<f64> = v0.iter().zip(&dv).map(|(a, b)| a + b).collect();
            neighbour_average(&tu, w, h, &mut ubar);
            neighbour_average(&tv, w, h, &mut vbar);
            for i in 0..n {
                // data term linear in the increment: It + Ix du + Iy dv
                let bu = ubar[i] - u0[i];
                let bv = vbar[i] - v0[i];
                let r = (it[i] + ix[i] * bu + iy[i] * bv) / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
                du[i] = bu - ix[i] * r;
                dv[i] = bv - iy[i] * r;
            }
        }
        for i in 0..n {
            u[i] = u0[i] + du[i];
            v[i] = v0[i] + dv[i];
        }
        done += steps;
    }
}

/// Flow `f` with `reference(p + f(p)) ~ target(p)`.
pub fn estimate_flow(reference: &Image, target: &Image, cfg: &FlowConfig) -> Result<FlowEstimate> {
    cfg.validate()?;
    if reference.width() != target.width() || reference.height() != target.height() {
        return Err(Error::DimensionMismatch(format!(
            "flow between {}x{} and {}x{}",
            reference.width(),
            reference.height(),
            target.width(),
            target.height()
        )));
    }
    let (w, h) = (reference.width(), reference.height());
    let r = reference.to_gray().plane_f64(0);
    let t = target.to_gray().plane_f64(0);
    let unreliable = variance(&r) < 1e-10 || variance(&t) < 1e-10;
    let rp = pyramid(Plane { data: r, w, h }, cfg.levels);
    let tp = pyramid(Plane { data: t, w, h }, cfg.levels);
    let alpha = cfg.smoothness / 255.0;
    let alpha2 = alpha * alpha;

    let top = rp.len() - 1;
    let mut u = vec![0.0; rp[top].w * rp[top].h];
    let mut v = u.clone();
    for lvl in (0..=top).rev() {
        let (lw, lh) = (rp[lvl].w, rp[lvl].h);
        if lvl < top {
            let (cw, ch) = (rp[lvl + 1].w, rp[lvl + 1].h);
            let (fx, fy) = (lw as f64 / cw as f64, lh as f64 / ch as f64);
            u = upsample_flow(&u, cw, ch, lw, lh).into_iter().map(|x| x * fx).collect();
            v = upsample_flow(&v, cw, ch, lw, lh).into_iter().map(|x| x * fy).collect();
        }
        let rs = Plane { data: gaussian_blur(&rp[lvl].data, lw, lh, PRESMOOTH_SIGMA), w: lw, h: lh };
        let ts = Plane { data: gaussian_blur(&tp[lvl].data, lw, lh, PRESMOOTH_SIGMA), w: lw, h: lh };
        refine_level(&rs, &ts, &mut u, &mut v, cfg.iterations, alpha2);
    }
    if u.iter().chain(&v).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("optical flow diverged".into()));
    }
    let flow = FlowField::from_planes(
        w,
        h,
        u.into_iter().map(|x| x as f32).collect(),
        v.into_iter().map(|x| x as f32).collect(),
    )?;
    Ok(FlowEstimate { flow, unreliable })
}
