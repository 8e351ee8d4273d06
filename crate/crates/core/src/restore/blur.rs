//! Region-wise forward blur: every Gaussian's footprint is widened by the
//! second moment of the kernel composed for the region holding its mean.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gaussian2d::{Cov2, GaussianGrads, GaussianSet, RenderPass};
use crate::imgcore::Image;
use crate::kernelbasis::{region_of, KernelBasis, RegionWeightField};

/// A composed region kernel reduced to its central second moment, with the
/// Jacobian of that moment with respect to the region's weights.
#[derive(Debug, Clone)]
pub(crate) struct RegionKernel {
    pub cov: Cov2,
    /// `d(cov.a, cov.b, cov.c) / d w_k` for every component, holding the
    /// clamp's active set fixed.
    jac: Vec<[f64; 3]>,
}

fn tap_offsets(support: usize) -> impl Iterator<Item = (f64, f64)> {
    let r = (support / 2) as isize;
    (-r..=r).flat_map(move |y| (-r..=r).map(move |x| (x as f64, y as f64)))
}

impl RegionKernel {
    pub fn new(basis: &KernelBasis, weights: &[f64]) -> Result<Self> {
        let s = basis.support();
        let raw = basis.reconstruct(weights)?;
        let active: Vec<bool> = raw.iter().map(|&v| v > 0.0).collect();
        let mass: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
        if !(mass > 0.0) {
            return Err(Error::Numerical("composed kernel has no positive mass".into()));
        }
        let mut m1 = [0.0; 2];
        let mut m2 = [0.0; 3];
        for ((x, y), &v) in tap_offsets(s).zip(&raw) {
            if v > 0.0 {
                let k = v / mass;
                m1[0] += k * x;
                m1[1] += k * y;
                m2[0] += k * x * x;
                m2[1] += k * x * y;
                m2[2] += k * y * y;
            }
        }
        let cov = Cov2::new(m2[0] - m1[0] * m1[0], m2[1] - m1[0] * m1[1], m2[2] - m1[1] * m1[1]);
        let jac = basis
            .components()
            .iter()
            .map(|comp| {
                let (mut a, mut b, mut d) = (0.0, [0.0; 2], [0.0; 3]);
                for (((x, y), &c), &on) in tap_offsets(s).zip(comp.data()).zip(&active) {
                    if on {
                        a += c;
                        b[0] += c * x;
                        b[1] += c * y;
                        d[0] += c * x * x;
                        d[1] += c * x * y;
                        d[2] += c * y * y;
                    }
                }
                let dm1 = [(b[0] - m1[0] * a) / mass, (b[1] - m1[1] * a) / mass];
                let dm2 = [
                    (d[0] - m2[0] * a) / mass,
                    (d[1] - m2[1] * a) / mass,
                    (d[2] - m2[2] * a) / mass,
                ];
                [
                    dm2[0] - 2.0 * dm1[0] * m1[0],
                    dm2[1] - dm1[0] * m1[1] - m1[0] * dm1[1],
                    dm2[2] - 2.0 * dm1[1] * m1[1],
                ]
            })
            .collect();
        Ok(Self { cov, jac })
    }

    /// Accumulate `dL/dw` into `out` given `g = dL/d(cov.a, cov.b, cov.c)`.
    pub fn backward(&self, g: [f64; 3], out: &mut [f64]) {
        for (o, j) in out.iter_mut().zip(&self.jac) {
            *o += g[0] * j[0] + g[1] * j[1] + g[2] * j[2];
        }
    }
}

/// Kernels of every region for one frame, plus each Gaussian's region.
pub(crate) struct FrameBlur {
    pub regions: Vec<Arc<RegionKernel>>,
    pub assignment: Vec<usize>,
    pub per_gaussian: Vec<Cov2>,
}

impl FrameBlur {
    pub fn new(
        set: &GaussianSet,
        weights: &RegionWeightField,
        frame: usize,
        basis: &KernelBasis,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if weights.n_components() != basis.n_components() {
            return Err(Error::DimensionMismatch(format!(
                "weights carry {} components, basis has {}",
                weights.n_components(),
                basis.n_components()
            )));
        }
        if frame >= weights.n_frames() {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} out of range for {} weight frames",
                weights.n_frames()
            )));
        }
        // regions still at zero weight share the principal kernel
        let mut principal: Option<Arc<RegionKernel>> = None;
        let mut regions = Vec::with_capacity(weights.regions());
        for r in 0..weights.regions() {
            let w = weights.weights(frame, r);
            if w.iter().all(|&v| v == 0.0) {
                if principal.is_none() {
                    principal = Some(Arc::new(RegionKernel::new(basis, w)?));
                }
                regions.push(Arc::clone(principal.as_ref().expect("just set")));
            } else {
                regions.push(Arc::new(RegionKernel::new(basis, w)?));
            }
        }
        let assignment: Vec<usize> = set
            .gaussians
            .iter()
            .map(|g| region_of(g.mean[0], g.mean[1], width, height, weights.grid()))
            .collect();
        let per_gaussian = assignment.iter().map(|&r| regions[r].cov).collect();
        Ok(Self {
            regions,
            assignment,
            per_gaussian,
        })
    }

    /// Fold per-Gaussian kernel gradients into `dL/dw` for this frame's
    /// weight row (`regions * components`, region-major).
    pub fn backward(&self, grads: &GaussianGrads, out: &mut [f64]) {
        let k = out.len() / self.regions.len().max(1);
        let mut per_region = vec![[0.0; 3]; self.regions.len()];
        for (&r, g) in self.assignment.iter().zip(&grads.kernel) {
            for j in 0..3 {
                per_region[r][j] += g[j];
            }
        }
        for (r, g) in per_region.iter().enumerate() {
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.regions[r].backward(*g, &mut out[r * k..(r + 1) * k]);
        }
    }
}

/// Render `set` as seen through frame `frame`'s region kernels.
pub fn forward_blur(
    set: &GaussianSet,
    weights: &RegionWeightField,
    frame: usize,
    basis: &KernelBasis,
    width: usize,
    height: usize,
) -> Result<Image> {
    let blur = FrameBlur::new(set, weights, frame, basis, width, height)?;
    RenderPass::forward(set, Some(&blur.per_gaussian), width, height)?.to_image()
}
