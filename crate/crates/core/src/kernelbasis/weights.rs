use crate::error::{Error, Result};

/// Per-frame, per-region blur weights over the basis components, stored as
/// `[frame][gy][gx][component]`.
///
/// Constructors require non-negative entries. The optimizer projects after
/// every step unless the positivity ablation is switched on, in which case
/// entries may go negative through [`data_mut`](Self::data_mut).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionWeightField {
    grid: (usize, usize),
    n_frames: usize,
    n_components: usize,
    data: Vec<f64>,
}

impl RegionWeightField {
    pub fn zeros(grid: (usize, usize), n_frames: usize, n_components: usize) -> Result<Self> {
        if grid.0 == 0 || grid.1 == 0 {
            return Err(Error::InvalidArgument(format!("empty region grid {}x{}", grid.0, grid.1)));
        }
        Ok(Self {
            grid,
            n_frames,
            n_components,
            data: vec![0.0; grid.0 * grid.1 * n_frames * n_components],
        })
    }

    pub fn from_data(grid: (usize, usize), n_frames: usize, n_components: usize, data: Vec<f64>) -> Result<Self> {
        let mut f = Self::zeros(grid, n_frames, n_components)?;
        if data.len() != f.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} frames x {} regions x {} components",
                data.len(),
                n_frames,
                grid.0 * grid.1,
                n_components
            )));
        }
        if data.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("region weights must be finite and non-negative".into()));
        }
        f.data = data;
        Ok(f)
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn regions(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Weights of all regions of frame `t`, region-major.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.regions() * self.n_components;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.regions() * self.n_components;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn weights(&self, t: usize, region: usize) -> &[f64] {
        let k = self.n_components;
        &self.frame(t)[region * k..(region + 1) * k]
    }

    pub fn weights_mut(&mut self, t: usize, region: usize) -> &mut [f64] {
        let k = self.n_components;
        &mut self.frame_mut(t)[region * k..(region + 1) * k]
    }

    /// Clamp every weight to `>= 0`.
    pub fn project_nonnegative(&mut self) {
        self.data.iter_mut().for_each(|w| *w = w.max(0.0));
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&w| w >= 0.0)
    }
}

/// Region index of the point `(x, y)` on a `width x height` image; points
/// outside the image go to the nearest region.
pub fn region_of(x: f64, y: f64, width: usize, height: usize, (gw, gh): (usize, usize)) -> usize {
    let cell = |v: f64, extent: usize, g: usize| -> usize {
        let c = ((v + 0.5) * g as f64 / extent as f64).floor();
        if c.is_nan() {
            0
        } else {
            (c.max(0.0) as usize).min(g - 1)
        }
    };
    cell(y, height, gh) * gw + cell(x, width, gw)
}

/// `lambda * sum |w|` over every frame, region and component.
pub fn sparsity_penalty(weights: &RegionWeightField, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * weights.data.iter().map(|w| w.abs()).sum::<f64>()
}
