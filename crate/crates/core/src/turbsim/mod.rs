//! Synthetic turbulence: per-frame random tilt, region-wise anisotropic blur,
//! and the isoplanatic-angle calculators used to size the region grid.
//!
//! All randomness is drawn from ChaCha streams keyed by `(seed, purpose,
//! index)`, so frames can be generated in any order or in parallel and stay
//! bit-identical.

mod isoplanatic;
mod scene;

pub use isoplanatic::{
    isoplanatic_angle_horizontal, isoplanatic_angle_profile, region_pixel_count, Cn2Profile, RegionCount, RegionMode,
};
pub use scene::natural_scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::filter::{convolve_window, gaussian_taps};
use crate::imgcore::{FlowField, Image};
use crate::kernelbasis::Kernel;
use crate::tiltcorrect::warp_image;

/// Largest tolerated kernel mass outside the support.
pub const MAX_TRUNCATION_MASS: f64 = 1e-3;

/// Purpose tags for random streams.
pub(crate) mod stream {
    pub const TILT: u64 = 1;
    pub const KERNEL: u64 = 2;
    pub const ENSEMBLE: u64 = 3;
    pub const SCENE: u64 = 4;
    pub const RESTORE: u64 = 5;
}

pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceParams {
    /// Fried parameter, m.
    pub fried_r0: f64,
    /// Propagation path length, m.
    pub path_length: f64,
    /// Wavelength, m.
    pub wavelength: f64,
    /// Field of view, rad.
    pub fov: f64,
    /// Per-component tilt standard deviation, px.
    pub tilt_sigma: f64,
    /// Tilt smoothing radius, px.
    pub tilt_corr_len: f64,
    /// Gaussian components per blur kernel.
    pub kernel_count: usize,
    /// Range of per-axis kernel standard deviations, px.
    pub kernel_sigma_range: (f64, f64),
    /// Side of the synthesized kernels, px (odd).
    pub kernel_support: usize,
    pub seed: u64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            fried_r0: 0.05,
            path_length: 500.0,
            wavelength: 550e-9,
            fov: 0.01,
            tilt_sigma: 1.0,
            tilt_corr_len: 8.0,
            kernel_count: 3,
            kernel_sigma_range: (0.5, 1.5),
            kernel_support: 21,
            seed: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

impl TurbulenceParams {
    pub fn validate(&self) -> Result<()> {
        positive("fried_r0", self.fried_r0)?;
        positive("path_length", self.path_length)?;
        positive("wavelength", self.wavelength)?;
        positive("fov", self.fov)?;
        positive("tilt_corr_len", self.tilt_corr_len)?;
        if !(self.tilt_sigma >= 0.0) || !self.tilt_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("tilt_sigma must be >= 0, got {}", self.tilt_sigma)));
        }
        if self.kernel_count == 0 {
            return Err(Error::InvalidArgument("kernel_count must be at least 1".into()));
        }
        let (lo, hi) = self.kernel_sigma_range;
        positive("kernel_sigma_range.0", lo)?;
        positive("kernel_sigma_range.1", hi)?;
        if lo > hi {
            return Err(Error::InvalidArgument(format!("kernel_sigma_range ({lo}, {hi}) is reversed")));
        }
        check_support(self.kernel_support, &[[hi, hi]], &[0.0], &[1.0])
    }
}

/// One blur kernel as a mixture of rotated anisotropic Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub weights: Vec<f64>,
    pub angles: Vec<f64>,
    pub sigmas: Vec<[f64; 2]>,
}

impl KernelParams {
    pub fn single(angle: f64, sigma: [f64; 2]) -> Self {
        Self {
            weights: vec![1.0],
            angles: vec![angle],
            sigmas: vec![sigma],
        }
    }
}

/// Draw mixture parameters: angles uniform on `[0, pi)`, per-axis sigmas
/// log-uniform on the configured range, weights from a flat Dirichlet.
pub fn sample_kernel_params<R: Rng>(rng: &mut R, params: &TurbulenceParams) -> KernelParams {
    let k = params.kernel_count;
    let (lo, hi) = params.kernel_sigma_range;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let log_uniform = |rng: &mut R| {
        if lhi > llo {
            rng.random_range(llo..lhi).exp()
        } else {
            lo
        }
    };
    let mut angles = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for _ in 0..k {
        angles.push(rng.random_range(0.0..std::f64::consts::PI));
        sigmas.push([log_uniform(rng), log_uniform(rng)]);
    }
    let gamma = Gamma::new(1.0, 1.0).expect("unit gamma");
    let mut weights: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let s: f64 = weights.iter().sum();
    if s > 0.0 {
        weights.iter_mut().for_each(|w| *w /= s);
    } else {
        weights = vec![1.0 / k as f64; k];
    }
    KernelParams { weights, angles, sigmas }
}

fn check_support(support: usize, sigmas: &[[f64; 2]], angles: &[f64], weights: &[f64]) -> Result<()> {
    if support < 3 || support % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel support {support} must be odd and >= 3")));
    }
    let max_sigma = sigmas.iter().flatten().fold(0.0f64, |m, &s| m.max(s));
    let total: f64 = weights.iter().sum();
    // union bound on the two marginals, at the outer edge of the last tap
    let edge = (support / 2) as f64 + 0.5;
    let mut mass = 0.0;
    for ((s, &th), &w) in sigmas.iter().zip(angles).zip(weights) {
        let (sn, cs) = th.sin_cos();
        let vx = cs * cs * s[0] * s[0] + sn * sn * s[1] * s[1];
        let vy = sn * sn * s[0] * s[0] + cs * cs * s[1] * s[1];
        let tail = libm::erfc(edge / (2.0 * vx).sqrt()) + libm::erfc(edge / (2.0 * vy).sqrt());
        mass += w / total * tail;
    }
    if (support as f64) < 6.0 * max_sigma + 1.0 || mass > MAX_TRUNCATION_MASS {
        return Err(Error::SupportTooSmall { support, mass });
    }
    Ok(())
}

/// Point-sample `sum_k w_k N(x; 0, R(theta_k) diag(sigma_k^2) R(theta_k)^T)`
/// on a `support x support` grid and normalize it to unit sum.
pub fn synth_kernel(kp: &KernelParams, support: usize) -> Result<Kernel> {
    let k = kp.weights.len();
    if k == 0 || kp.angles.len() != k || kp.sigmas.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "kernel mixture with {} weights, {} angles, {} sigma pairs",
            k,
            kp.angles.len(),
            kp.sigmas.len()
        )));
    }
    if kp.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || !(kp.weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidArgument("kernel weights must be non-negative with positive sum".into()));
    }
    if kp.sigmas.iter().flatten().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("kernel sigmas must be positive".into()));
    }
    check_support(support, &kp.sigmas, &kp.angles, &kp.weights)?;
    let r = (support / 2) as isize;
    let mut data = vec![0.0; support * support];
    for ((&w, &th), s) in kp.weights.iter().zip(&kp.angles).zip(&kp.sigmas) {
        if w == 0.0 {
            continue;
        }
        let (sn, cs) = th.sin_cos();
        let norm = w / (2.0 * std::f64::consts::PI * s[0] * s[1]);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (dx as f64, dy as f64);
                let u = cs * x + sn * y;
                let v = -sn * x + cs * y;
                let q = (u / s[0]).powi(2) + (v / s[1]).powi(2);
                data[((dy + r) * support as isize + dx + r) as usize] += norm * (-0.5 * q).exp();
            }
        }
    }
    let total: f64 = data.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("synthesized kernel has zero mass".into()));
    }
    data.iter_mut().for_each(|v| *v /= total);
    Kernel::new(support, data)
}

/// `count` kernels drawn from the simulator's parameter distribution.
pub fn sample_ensemble(params: &TurbulenceParams, count: usize, support: usize) -> Result<Vec<Kernel>> {
    params.validate()?;
    let mut rng = stream_rng(params.seed, stream::ENSEMBLE, 0);
    (0..count)
        .map(|_| synth_kernel(&sample_kernel_params(&mut rng, params), support))
        .collect()
}

/// Smooth zero-mean tilt field for one frame: white noise on a padded
/// domain, Gaussian-filtered with radius `tilt_corr_len`, then rescaled so
/// the spatial standard deviation of each component is exactly `tilt_sigma`.
/// The rescale is even in the noise, so the ensemble mean stays zero.
pub fn gen_tilt_field(params: &TurbulenceParams, frame_index: u64, width: usize, height: usize) -> Result<FlowField> {
    params.validate()?;
    if params.tilt_sigma == 0.0 {
        return Ok(FlowField::zeros(width, height));
    }
    let radius = (3.0 * params.tilt_corr_len).ceil() as usize;
    let taps = gaussian_taps(params.tilt_corr_len, radius);
    // var of separably filtered unit white noise = (sum t^2)^2; used when
    // the field is too small to measure its own spread
    let gain = params.tilt_sigma / taps.iter().map(|t| t * t).sum::<f64>();
    let (pw, ph) = (width + 2 * radius, height + 2 * radius);
    let mut rng = stream_rng(params.seed, stream::TILT, frame_index);
    let mut component = || -> Vec<f32> {
        let noise: Vec<f64> = (0..pw * ph).map(|_| StandardNormal.sample(&mut rng)).collect();
        // valid-region separable filter
        let mut tmp = vec![0.0; width * ph];
        for y in 0..ph {
            for x in 0..width {
                let row = &noise[y * pw + x..y * pw + x + taps.len()];
                tmp[y * width + x] = row.iter().zip(&taps).map(|(a, b)| a * b).sum();
            }
        }
        let mut field = vec![0f64; width * height];
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * tmp[(y + k) * width + x];
                }
                field[y * width + x] = acc;
            }
        }
        let n = field.len() as f64;
        let mean = field.iter().sum::<f64>() / n;
        let spread = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if field.len() >= 16 && spread > 0.0 {
            params.tilt_sigma / spread
        } else {
            gain
        };
        field.into_iter().map(|v| (scale * v) as f32).collect()
    };
    let dx = component();
    let dy = component();
    FlowField::from_planes(width, height, dx, dy)
}

/// Degraded frames plus everything needed to replay them.
#[derive(Debug, Clone)]
pub struct DegradedSequence {
    pub frames: Vec<Image>,
    pub tilts: Vec<FlowField>,
    /// `kernels[t][gy * gw + gx]`.
    pub kernels: Vec<Vec<KernelParams>>,
    pub grid: (usize, usize),
    pub support: usize,
}

fn check_grid(width: usize, height: usize, (gw, gh): (usize, usize)) -> Result<()> {
    if gw == 0 || gh == 0 || width % gw != 0 || height % gh != 0 {
        return Err(Error::InvalidArgument(format!(
            "region grid {gw}x{gh} does not divide image {width}x{height}"
        )));
    }
    Ok(())
}

/// Convolve each region of `img` with its own kernel, reading neighbours
/// across region borders and replicating the image edge.
pub fn convolve_regions(img: &Image, kernels: &[Kernel], grid: (usize, usize)) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    check_grid(w, h, grid)?;
    let (gw, gh) = grid;
    if kernels.len() != gw * gh {
        return Err(Error::DimensionMismatch(format!("{} kernels for {} regions", kernels.len(), gw * gh)));
    }
    let (rw, rh) = (w / gw, h / gh);
    let mut out = Vec::with_capacity(w * h * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane_f64(c);
        let mut acc = vec![0.0; w * h];
        for gy in 0..gh {
            for gx in 0..gw {
                let k = &kernels[gy * gw + gx];
                convolve_window(
                    &plane,
                    w,
                    h,
                    k.data(),
                    k.support(),
                    (gx * rw, (gx + 1) * rw),
                    (gy * rh, (gy + 1) * rh),
                    &mut acc,
                );
            }
        }
        out.extend(acc.into_iter().map(|v| v as f32));
    }
    Image::from_planar(w, h, img.channels(), out)
}

/// Frame `t` is the region-wise blur of `warp(clean, tilt_t)`.
pub fn degrade_sequence(
    clean: &Image,
    params: &TurbulenceParams,
    n_frames: usize,
    grid: (usize, usize),
) -> Result<DegradedSequence> {
    params.validate()?;
    let (w, h) = (clean.width(), clean.height());
    check_grid(w, h, grid)?;
    let support = params.kernel_support;
    let per_frame: Vec<(Image, FlowField, Vec<KernelParams>)> = (0..n_frames)
        .into_par_iter()
        .map(|t| {
            let tilt = gen_tilt_field(params, t as u64, w, h)?;
            let mut rng = stream_rng(params.seed, stream::KERNEL, t as u64);
            let kp: Vec<KernelParams> = (0..grid.0 * grid.1)
                .map(|_| sample_kernel_params(&mut rng, params))
                .collect();
            let kernels = kp.iter().map(|k| synth_kernel(k, support)).collect::<Result<Vec<_>>>()?;
            let warped = warp_image(clean, &tilt)?;
            let frame = convolve_regions(&warped, &kernels, grid)?;
            Ok((frame, tilt, kp))
        })
        .collect::<Result<_>>()?;
    let mut seq = DegradedSequence {
        frames: Vec::with_capacity(n_frames),
        tilts: Vec::with_capacity(n_frames),
        kernels: Vec::with_capacity(n_frames),
        grid,
        support,
    };
    for (f, t, k) in per_frame {
        seq.frames.push(f);
        seq.tilts.push(t);
        seq.kernels.push(k);
    }
    Ok(seq)
}
