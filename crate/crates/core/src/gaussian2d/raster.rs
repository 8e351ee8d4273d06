//! Alpha-composited rasterization of planar Gaussians and its analytic
//! backward pass.
//!
//! Gaussians are visited front to back in list order. Each one is truncated
//! to the bounding box of its 3-sigma ellipse. When a kernel covariance `K_i`
//! is supplied for a Gaussian, its footprint becomes
//! `R(phi_i) (S_i^2 + K_i) R(phi_i)^T` and its peak opacity is scaled by
//! `sqrt(det S_i^2 / det(S_i^2 + K_i))`, which is what convolving the
//! footprint with a unit-mass Gaussian kernel `N(0, R K R^T)` produces.
//!
//! Work is split into horizontal bands of rows. Every pixel belongs to one
//! band and is composited sequentially, and per-band gradient partials are
//! reduced in band order, so the output does not depend on the thread count.

use rayon::prelude::*;

use super::{Cov2, GaussianSet};
use crate::error::{Error, Result};
use crate::imgcore::Image;

const BAND_ROWS: usize = 16;
/// Footprint truncation radius in standard deviations.
const CUTOFF_SIGMAS: f64 = 3.0;
const BOX_SLACK: f64 = 1e-9;
/// Below this transmittance gap the occlusion term of the opacity gradient is dropped.
const OPAQUE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Prepared {
    mean: [f64; 2],
    /// Inverse footprint covariance.
    conic: Cov2,
    /// Opacity times mass-preserving amplitude.
    peak: f64,
    color: [f64; 3],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Gradients with respect to the unconstrained parameterization of each
/// Gaussian, plus the kernel covariance used for it (fields `a, b, c` of
/// [`Cov2`], `b` counted once).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianGrads {
    pub mean: Vec<[f64; 2]>,
    pub log_scale: Vec<[f64; 2]>,
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub kernel: Vec<[f64; 3]>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![[0.0; 2]; n],
            log_scale: vec![[0.0; 2]; n],
            rotation: vec![0.0; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            kernel: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &GaussianGrads) {
        fn add<const N: usize>(a: &mut [[f64; N]], b: &[[f64; N]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..N {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.mean, &other.mean);
        add(&mut self.log_scale, &other.log_scale);
        add(&mut self.color, &other.color);
        add(&mut self.kernel, &other.kernel);
        for (x, y) in self.rotation.iter_mut().zip(&other.rotation) {
            *x += y;
        }
        for (x, y) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *x += y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0f64;
        for v in self.mean.iter().flatten().chain(self.log_scale.iter().flatten()) {
            m = m.max(v.abs());
        }
        for v in self.color.iter().flatten().chain(self.kernel.iter().flatten()) {
            m = m.max(v.abs());
        }
        for v in self.rotation.iter().chain(&self.opacity_logit) {
            m = m.max(v.abs());
        }
        m
    }
}

/// Per-Gaussian sums gathered over its footprint during the backward pass.
#[derive(Debug, Clone, Copy, Default)]
struct Raw {
    /// sum of dL/dalpha' * alpha'
    s_alpha: f64,
    /// dL/dmean
    mean: [f64; 2],
    /// dL/d(conic a, b, c), b counted once
    conic: [f64; 3],
    color: [f64; 3],
}

impl Raw {
    fn add(&mut self, o: &Raw) {
        self.s_alpha += o.s_alpha;
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
    }
}

/// A completed forward render that can be differentiated.
pub struct RenderPass<'a> {
    set: &'a GaussianSet,
    kernels: Option<&'a [Cov2]>,
    width: usize,
    height: usize,
    prepared: Vec<Option<Prepared>>,
    bands: Vec<Vec<u32>>,
    /// Planar composited color, `channels * width * height`.
    color: Vec<f64>,
}

fn prepare(
    set: &GaussianSet,
    kernels: Option<&[Cov2]>,
    width: usize,
    height: usize,
) -> Result<Vec<Option<Prepared>>> {
    set.gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let local = Cov2::diag(g.scale[0] * g.scale[0], g.scale[1] * g.scale[1]);
            let (local, amp) = match kernels {
                Some(k) => {
                    let m = local.add(&k[i]);
                    let dm = m.det();
                    if !(dm > super::DET_TOLERANCE) {
                        return Err(Error::DegenerateGaussian { det: dm });
                    }
                    (m, (local.det() / dm).sqrt())
                }
                None => (local, 1.0),
            };
            let cov = local.rotated(g.rotation);
            let conic = cov.inverse()?;
            let rx = CUTOFF_SIGMAS * cov.a.max(0.0).sqrt();
            let ry = CUTOFF_SIGMAS * cov.c.max(0.0).sqrt();
            // widened by BOX_SLACK so rounding in the covariance cannot flip edge pixels
            let lo_x = (g.mean[0] - rx - BOX_SLACK).ceil();
            let hi_x = (g.mean[0] + rx + BOX_SLACK).floor();
            let lo_y = (g.mean[1] - ry - BOX_SLACK).ceil();
            let hi_y = (g.mean[1] + ry + BOX_SLACK).floor();
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > (width - 1) as f64 || lo_y > (height - 1) as f64 {
                return Ok(None);
            }
            Ok(Some(Prepared {
                mean: g.mean,
                conic,
                peak: g.opacity * amp,
                color: g.color,
                x0: lo_x.max(0.0) as usize,
                x1: (hi_x as usize).min(width - 1),
                y0: lo_y.max(0.0) as usize,
                y1: (hi_y as usize).min(height - 1),
            }))
        })
        .collect()
}

#[inline]
fn alpha_at(p: &Prepared, x: usize, y: usize) -> (f64, f64, f64) {
    let dx = x as f64 - p.mean[0];
    let dy = y as f64 - p.mean[1];
    let q = p.conic.a * dx * dx + 2.0 * p.conic.b * dx * dy + p.conic.c * dy * dy;
    (p.peak * (-0.5 * q).exp(), dx, dy)
}

impl<'a> RenderPass<'a> {
    /// Render `set` on a `width x height` grid. `kernels`, when given, holds
    /// one kernel covariance per Gaussian in that Gaussian's local frame.
    pub fn forward(
        set: &'a GaussianSet,
        kernels: Option<&'a [Cov2]>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("render target must be non-empty".into()));
        }
        if let Some(k) = kernels {
            if k.len() != set.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} kernel covariances for {} gaussians",
                    k.len(),
                    set.len()
                )));
            }
        }
        let prepared = prepare(set, kernels, width, height)?;
        let n_bands = height.div_ceil(BAND_ROWS);
        let mut bands: Vec<Vec<u32>> = vec![Vec::new(); n_bands];
        for (i, p) in prepared.iter().enumerate() {
            if let Some(p) = p {
                for band in &mut bands[p.y0 / BAND_ROWS..=p.y1 / BAND_ROWS] {
                    band.push(i as u32);
                }
            }
        }
        let ch = set.channels();
        let band_out: Vec<Vec<f64>> = bands
            .par_iter()
            .enumerate()
            .map(|(b, list)| {
                let r0 = b * BAND_ROWS;
                let r1 = (r0 + BAND_ROWS).min(height);
                let rows = r1 - r0;
                let mut trans = vec![1.0f64; rows * width];
                let mut out = vec![0.0f64; ch * rows * width];
                for &gi in list {
                    let p = prepared[gi as usize].as_ref().unwrap();
                    for y in p.y0.max(r0)..=p.y1.min(r1 - 1) {
                        let row = (y - r0) * width;
                        for x in p.x0..=p.x1 {
                            let (a, _, _) = alpha_at(p, x, y);
                            let t = trans[row + x];
                            let w = t * a;
                            for c in 0..ch {
                                out[c * rows * width + row + x] += w * p.color[c];
                            }
                            trans[row + x] = t * (1.0 - a);
                        }
                    }
                }
                out
            })
            .collect();
        let n = width * height;
        let mut color = vec![0.0f64; ch * n];
        for (b, out) in band_out.iter().enumerate() {
            let r0 = b * BAND_ROWS;
            let rows = out.len() / (ch * width);
            for c in 0..ch {
                color[c * n + r0 * width..c * n + (r0 + rows) * width]
                    .copy_from_slice(&out[c * rows * width..(c + 1) * rows * width]);
            }
        }
        Ok(Self {
            set,
            kernels,
            width,
            height,
            prepared,
            bands,
            color,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Planar composited color.
    pub fn color(&self) -> &[f64] {
        &self.color
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::from_planar_f64(self.width, self.height, self.set.channels(), &self.color)
    }

    /// Backpropagate `upstream = dL/dcolor` (planar, same layout as
    /// [`color`](Self::color)) to every Gaussian parameter.
    pub fn backward(&self, upstream: &[f64]) -> Result<GaussianGrads> {
        let ch = self.set.channels();
        let (width, height) = (self.width, self.height);
        let n = width * height;
        if upstream.len() != ch * n {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient has {} samples, render has {}",
                upstream.len(),
                ch * n
            )));
        }
        let final_color = &self.color;
        let prepared = &self.prepared;
        let partials: Vec<Vec<(u32, Raw)>> = self
            .bands
            .par_iter()
            .enumerate()
            .map(|(b, list)| {
                let r0 = b * BAND_ROWS;
                let r1 = (r0 + BAND_ROWS).min(height);
                let rows = r1 - r0;
                let mut trans = vec![1.0f64; rows * width];
                let mut front = vec![0.0f64; ch * rows * width];
                let mut out = Vec::with_capacity(list.len());
                for &gi in list {
                    let p = prepared[gi as usize].as_ref().unwrap();
                    let mut raw = Raw::default();
                    for y in p.y0.max(r0)..=p.y1.min(r1 - 1) {
                        let row = (y - r0) * width;
                        for x in p.x0..=p.x1 {
                            let (a, dx, dy) = alpha_at(p, x, y);
                            let li = row + x;
                            let gi_pix = y * width + x;
                            let t = trans[li];
                            let mut g_alpha = 0.0;
                            for c in 0..ch {
                                let up = upstream[c * n + gi_pix];
                                let contrib = t * a * p.color[c];
                                let f = front[c * rows * width + li] + contrib;
                                front[c * rows * width + li] = f;
                                raw.color[c] += up * t * a;
                                let mut d = t * p.color[c];
                                let gap = 1.0 - a;
                                if gap > OPAQUE_EPS {
                                    let behind = final_color[c * n + gi_pix] - f;
                                    d -= behind / gap;
                                }
                                g_alpha += up * d;
                            }
                            trans[li] = t * (1.0 - a);
                            if g_alpha == 0.0 || a == 0.0 {
                                continue;
                            }
                            let ga = g_alpha * a;
                            raw.s_alpha += ga;
                            // q = d^T conic d, alpha' = peak * exp(-q/2)
                            let qx = p.conic.a * dx + p.conic.b * dy;
                            let qy = p.conic.b * dx + p.conic.c * dy;
                            raw.mean[0] += ga * qx;
                            raw.mean[1] += ga * qy;
                            raw.conic[0] += -0.5 * ga * dx * dx;
                            raw.conic[1] += -ga * dx * dy;
                            raw.conic[2] += -0.5 * ga * dy * dy;
                        }
                    }
                    out.push((gi, raw));
                }
                out
            })
            .collect();

        let mut raws = vec![Raw::default(); self.set.len()];
        for band in &partials {
            for (gi, raw) in band {
                raws[*gi as usize].add(raw);
            }
        }

        let mut grads = GaussianGrads::zeros(self.set.len());
        for (i, (g, raw)) in self.set.gaussians.iter().zip(&raws).enumerate() {
            if prepared[i].is_none() {
                continue;
            }
            let s1sq = g.scale[0] * g.scale[0];
            let s2sq = g.scale[1] * g.scale[1];
            let kernel = self.kernels.map(|k| k[i]).unwrap_or(Cov2::ZERO);
            let m = Cov2::new(s1sq + kernel.a, kernel.b, s2sq + kernel.c);
            let sigma = m.rotated(g.rotation);
            let conic = sigma.inverse()?;

            // dL/dSigma = -Q G_Q Q, with symmetric gradient matrices whose
            // off-diagonal holds half the gradient of the shared entry.
            let gq = [raw.conic[0], 0.5 * raw.conic[1], raw.conic[2]];
            let gs = neg_sandwich(&conic, gq);

            // Sigma = R M R^T
            let (sn, cs) = g.rotation.sin_cos();
            let r = [[cs, -sn], [sn, cs]];
            let dr = [[-sn, -cs], [cs, -sn]];
            let mm = [[m.a, m.b], [m.b, m.c]];
            let gsm = [[gs[0], gs[1]], [gs[1], gs[2]]];
            // dL/dM = R^T G R
            let gm = mat_mul(&transpose(&r), &mat_mul(&gsm, &r));
            // dL/dphi = <G, dR M R^T + R M dR^T>
            let a1 = mat_mul(&dr, &mat_mul(&mm, &transpose(&r)));
            let a2 = mat_mul(&r, &mat_mul(&mm, &transpose(&dr)));
            let mut g_rot = 0.0;
            for u in 0..2 {
                for v in 0..2 {
                    g_rot += gsm[u][v] * (a1[u][v] + a2[u][v]);
                }
            }

            let mut g_ls = [gm[0][0] * 2.0 * s1sq, gm[1][1] * 2.0 * s2sq];
            let mut g_k = [gm[0][0], 2.0 * gm[0][1], gm[1][1]];
            if self.kernels.is_some() {
                // log amp = log s1 + log s2 - 0.5 log det M
                let minv = m.inverse()?;
                g_ls[0] += raw.s_alpha * (1.0 - s1sq * minv.a);
                g_ls[1] += raw.s_alpha * (1.0 - s2sq * minv.c);
                g_k[0] += -0.5 * raw.s_alpha * minv.a;
                g_k[1] += -raw.s_alpha * minv.b;
                g_k[2] += -0.5 * raw.s_alpha * minv.c;
            }

            grads.mean[i] = raw.mean;
            grads.log_scale[i] = g_ls;
            grads.rotation[i] = g_rot;
            grads.opacity_logit[i] = raw.s_alpha * (1.0 - g.opacity);
            grads.color[i] = raw.color;
            grads.kernel[i] = g_k;
        }
        Ok(grads)
    }
}

type M2 = [[f64; 2]; 2];

fn mat_mul(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// `-Q G Q` for symmetric `Q` and symmetric `G = [[g0, g1], [g1, g2]]`,
/// returned as `[m00, m01, m11]`.
fn neg_sandwich(q: &Cov2, g: [f64; 3]) -> [f64; 3] {
    let qm = [[q.a, q.b], [q.b, q.c]];
    let gm = [[g[0], g[1]], [g[1], g[2]]];
    let r = mat_mul(&qm, &mat_mul(&gm, &qm));
    [-r[0][0], -r[0][1], -r[1][1]]
}

/// Composite `set` into a `width x height` image with the set's channel count.
/// An empty set renders black.
pub fn rasterize(set: &GaussianSet, width: usize, height: usize) -> Result<Image> {
    set.validate()?;
    RenderPass::forward(set, None, width, height)?.to_image()
}
