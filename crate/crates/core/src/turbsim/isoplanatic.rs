//! Isoplanatic angle and the region grid it implies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled refractive-index structure profile: `(height m, Cn2 m^-2/3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cn2Profile {
    samples: Vec<(f64, f64)>,
}

impl Cn2Profile {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument("Cn2 profile needs at least 2 samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument("Cn2 profile heights must be strictly increasing".into()));
            }
        }
        if samples.iter().any(|&(h, c)| !h.is_finite() || !c.is_finite() || c < 0.0 || h < 0.0) {
            return Err(Error::InvalidArgument("Cn2 profile needs finite, non-negative samples".into()));
        }
        Ok(Self { samples })
    }

    /// Constant `cn2` on `[0, top]` sampled at `n` evenly spaced heights.
    pub fn constant(cn2: f64, top: f64, n: usize) -> Result<Self> {
        let n = n.max(2);
        Self::new((0..n).map(|i| (top * i as f64 / (n - 1) as f64, cn2)).collect())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Trapezoidal estimate of `integral Cn2(h) h^(5/3) dh`.
    pub fn weighted_integral(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let f0 = w[0].1 * w[0].0.powf(5.0 / 3.0);
                let f1 = w[1].1 * w[1].0.powf(5.0 / 3.0);
                0.5 * (f0 + f1) * (w[1].0 - w[0].0)
            })
            .sum()
    }
}

/// `0.058 lambda^(6/5) [integral Cn2 h^(5/3) dh]^(-3/5)` in radians.
pub fn isoplanatic_angle_profile(profile: &Cn2Profile, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("wavelength must be positive, got {lambda}")));
    }
    let integral = profile.weighted_integral();
    if !(integral > 0.0) {
        return Err(Error::InfiniteAngle);
    }
    let theta = 0.058 * lambda.powf(1.2) * integral.powf(-0.6);
    if !theta.is_finite() {
        return Err(Error::Numerical(format!("isoplanatic angle overflowed for integral {integral}")));
    }
    Ok(theta)
}

/// Horizontal-path approximation `0.53 r0 / L` in radians.
pub fn isoplanatic_angle_horizontal(r0: f64, path_length: f64) -> Result<f64> {
    if !(r0 > 0.0) || !(path_length > 0.0) || !r0.is_finite() || !path_length.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "r0 and path length must be positive, got {r0} and {path_length}"
        )));
    }
    Ok(0.53 * r0 / path_length)
}

/// How the per-pixel angular resolution is derived from the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    /// `alpha = FOV / (H W)`, as printed.
    #[default]
    Literal,
    /// `alpha = FOV / max(H, W)`.
    PerAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionCount {
    /// Pixels along one edge of an isoplanatic patch, at least 1.
    pub patch_pixels: f64,
    /// `(gw, gh)` region counts.
    pub grid: (usize, usize),
}

impl RegionCount {
    pub fn regions(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

fn ceil_tol(v: f64) -> usize {
    // tolerate round-off so an exact 512/16 stays 32
    let r = v.round();
    if (v - r).abs() < 1e-9 * v.abs().max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

pub fn region_pixel_count(fov: f64, height: usize, width: usize, theta: f64, mode: RegionMode) -> Result<RegionCount> {
    if !(fov > 0.0) || !(theta > 0.0) || height == 0 || width == 0 {
        return Err(Error::InvalidArgument("region count needs positive fov, theta and size".into()));
    }
    let alpha = match mode {
        RegionMode::Literal => fov / (height as f64 * width as f64),
        RegionMode::PerAxis => fov / height.max(width) as f64,
    };
    let n = (theta / alpha).max(1.0);
    Ok(RegionCount {
        patch_pixels: n,
        grid: (ceil_tol(width as f64 / n).max(1), ceil_tol(height as f64 / n).max(1)),
    })
}
