//! Planar Gaussian scene representation.
//!
//! Every Gaussian lies on the image plane and rotates about the viewing
//! axis only, so its covariance is `R(phi) diag(s1^2, s2^2) R(phi)^T` and no
//! camera projection is involved. Blur enters by adding a kernel covariance
//! expressed in the Gaussian's own rotated frame (see [`blur_covariance`]).

mod raster;

pub use raster::{rasterize, GaussianGrads, RenderPass};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant below which a covariance is treated as singular (px^4).
pub const DET_TOLERANCE: f64 = 1e-12;

/// Symmetric 2x2 matrix `[[a, b], [b, c]]` in px^2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cov2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Cov2 {
    pub const ZERO: Cov2 = Cov2 { a: 0.0, b: 0.0, c: 0.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn diag(a: f64, c: f64) -> Self {
        Self { a, b: 0.0, c }
    }

    pub fn isotropic(var: f64) -> Self {
        Self::diag(var, var)
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    /// Positive semi-definite up to a relative tolerance.
    pub fn is_psd(&self) -> bool {
        let tol = 1e-12 * (self.a.abs() + self.c.abs()).max(1.0);
        self.a >= -tol && self.c >= -tol && self.det() >= -tol * tol.max(self.trace().abs())
    }

    pub fn inverse(&self) -> Result<Cov2> {
        let d = self.det();
        if !(d > DET_TOLERANCE) {
            return Err(Error::DegenerateGaussian { det: d });
        }
        Ok(Cov2::new(self.c / d, -self.b / d, self.a / d))
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.a + self.c);
        let r = (0.25 * (self.a - self.c).powi(2) + self.b * self.b).sqrt();
        [m + r, m - r]
    }

    pub fn add(&self, o: &Cov2) -> Cov2 {
        Cov2::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }

    pub fn scale(&self, s: f64) -> Cov2 {
        Cov2::new(self.a * s, self.b * s, self.c * s)
    }

    /// `R(phi) M R(phi)^T`.
    pub fn rotated(&self, phi: f64) -> Cov2 {
        let (s, c) = phi.sin_cos();
        // R M
        let m00 = c * self.a - s * self.b;
        let m01 = c * self.b - s * self.c;
        let m10 = s * self.a + c * self.b;
        let m11 = s * self.b + c * self.c;
        // (R M) R^T
        Cov2::new(
            m00 * c - m01 * s,
            m00 * s + m01 * c,
            m10 * s + m11 * c,
        )
    }
}

/// Covariance of a planar Gaussian with rotation `phi` and axis scales `scale`.
pub fn build_covariance(phi: f64, scale: [f64; 2]) -> Result<Cov2> {
    if !(scale[0] > 0.0 && scale[1] > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scales must be positive, got ({}, {})",
            scale[0], scale[1]
        )));
    }
    if !phi.is_finite() {
        return Err(Error::InvalidArgument("rotation must be finite".into()));
    }
    Ok(Cov2::diag(scale[0] * scale[0], scale[1] * scale[1]).rotated(phi))
}

/// Blur-augmented covariance: `base + sum_k w_k R(phi) B_k R(phi)^T`.
pub fn blur_covariance(base: &Cov2, basis_covs: &[Cov2], weights: &[f64], phi: f64) -> Result<Cov2> {
    if basis_covs.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernel covariances but {} weights",
            basis_covs.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("blur weight {w} is negative")));
    }
    let mut kernel = Cov2::ZERO;
    for (cov, &w) in basis_covs.iter().zip(weights) {
        kernel = kernel.add(&cov.scale(w));
    }
    Ok(base.add(&kernel.rotated(phi)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2D {
    /// Pixel coordinates; pixel `(x, y)` has its center at `(x, y)`.
    pub mean: [f64; 2],
    pub scale: [f64; 2],
    pub rotation: f64,
    pub opacity: f64,
    /// Only the first `GaussianSet::channels` entries are meaningful.
    pub color: [f64; 3],
}

impl Gaussian2D {
    pub fn covariance(&self) -> Result<Cov2> {
        build_covariance(self.rotation, self.scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale[0] > 0.0 && self.scale[1] > 0.0) {
            return Err(Error::InvalidArgument("non-positive gaussian scale".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidArgument(format!("opacity {} outside [0,1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("color outside [0,1]".into()));
        }
        if !(self.mean[0].is_finite() && self.mean[1].is_finite() && self.rotation.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gaussian parameters".into()));
        }
        Ok(())
    }
}

/// Unnormalized density `exp(-0.5 d^T S^-1 d)` at point `p`.
pub fn eval_gaussian(g: &Gaussian2D, p: [f64; 2]) -> Result<f64> {
    let inv = g.covariance()?.inverse()?;
    let dx = p[0] - g.mean[0];
    let dy = p[1] - g.mean[1];
    let q = inv.a * dx * dx + 2.0 * inv.b * dx * dy + inv.c * dy * dy;
    Ok((-0.5 * q).exp())
}

/// Ordered Gaussians; list order is the compositing order (front first).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    channels: usize,
    pub gaussians: Vec<Gaussian2D>,
}

#[derive(Serialize, Deserialize)]
struct GaussianRecord {
    mean: [f64; 2],
    scale: [f64; 2],
    rot: f64,
    alpha: f64,
    color: Vec<f64>,
}

impl GaussianSet {
    pub fn new(channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Unsupported(format!("{channels} color channels")));
        }
        Ok(Self {
            channels,
            gaussians: Vec::new(),
        })
    }

    pub fn with_gaussians(channels: usize, gaussians: Vec<Gaussian2D>) -> Result<Self> {
        let mut set = Self::new(channels)?;
        set.gaussians = gaussians;
        Ok(set)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian2D) {
        self.gaussians.push(g);
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussians.iter().try_for_each(Gaussian2D::validate)
    }

    /// JSON array of `{mean, scale, rot, alpha, color}` records.
    pub fn to_json(&self) -> Result<String> {
        let records: Vec<GaussianRecord> = self
            .gaussians
            .iter()
            .map(|g| GaussianRecord {
                mean: g.mean,
                scale: g.scale,
                rot: g.rotation,
                alpha: g.opacity,
                color: g.color[..self.channels].to_vec(),
            })
            .collect();
        Ok(serde_json::to_string(&records)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<GaussianRecord> = serde_json::from_str(text)?;
        let channels = records.first().map_or(1, |r| r.color.len());
        let mut set = Self::new(channels)?;
        for r in records {
            if r.color.len() != channels {
                return Err(Error::DimensionMismatch("inconsistent color lengths".into()));
            }
            let mut color = [0.0; 3];
            color[..channels].copy_from_slice(&r.color);
            set.push(Gaussian2D {
                mean: r.mean,
                scale: r.scale,
                rotation: r.rot,
                opacity: r.alpha,
                color,
            });
        }
        set.validate()?;
        Ok(set)
    }
}
