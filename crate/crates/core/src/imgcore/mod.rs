//! Pixel and flow containers shared by every stage of the pipeline.
//!
//! Images are stored channel-planar (`c * H * W + y * W + x`), matching the
//! on-disk raw-float layout, with every sample kept in the unit interval.

pub mod filter;
mod io;

pub use io::{
    read_flow, read_image, read_planes, sidecar_path, write_flow, write_image, write_planes, write_png16,
    PlaneHeader,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

#[inline]
fn sanitize(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    /// Image filled with a single value (clamped).
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        img.data.fill(sanitize(value));
        Ok(img)
    }

    /// Build from planar data. Samples are clamped into `[0, 1]`; NaN is rejected.
    pub fn from_planar(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("image data contains NaN".into()));
        }
        let data = data.into_iter().map(sanitize).collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Build from a planar `f64` buffer, clamping and rounding to `f32`.
    pub fn from_planar_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Self> {
        Self::from_planar(width, height, channels, data.iter().map(|&v| v as f32).collect())
    }

    /// Single-channel image from a closure over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut img = Self::new(width, height, 1)?;
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = sanitize(f(x, y));
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel plane `c` widened to `f64`.
    pub fn plane_f64(&self, c: usize) -> Vec<f64> {
        self.plane(c).iter().map(|&v| v as f64).collect()
    }

    /// All planes widened to `f64`, planar.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = sanitize(v);
    }

    /// Apply `f` to every sample, clamping the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| sanitize(f(v))).collect(),
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Luma image (BT.601). Single-channel input is returned unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixel_count();
        let data = (0..n)
            .map(|i| {
                sanitize(
                    LUMA_WEIGHTS[0] * self.data[i]
                        + LUMA_WEIGHTS[1] * self.data[n + i]
                        + LUMA_WEIGHTS[2] * self.data[2 * n + i],
                )
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Per-sample arithmetic mean of equally shaped images.
    pub fn mean_of(images: &[Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of empty image list".into()))?;
        let mut acc = vec![0f64; first.data.len()];
        for img in images {
            first.ensure_same_shape(img)?;
            for (a, &v) in acc.iter_mut().zip(&img.data) {
                *a += v as f64;
            }
        }
        let n = images.len() as f64;
        let data: Vec<f64> = acc.into_iter().map(|v| v / n).collect();
        Image::from_planar_f64(first.width, first.height, first.channels, &data)
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("empty image {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Unsupported(format!("{channels} channels (expected 1 or 3)")));
    }
    Ok(())
}

/// Dense per-pixel displacement field, in pixels.
///
/// `flow(p)` is the offset added to `p` when sampling the source image, so
/// `warp(src, flow)(p) = src(p + flow(p))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn from_planes(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "flow {}x{} needs {} samples per plane, got {} and {}",
                width,
                height,
                n,
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("flow contains non-finite values".into()));
        }
        Ok(Self { width, height, dx, dy })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    pub fn dx_mut(&mut self) -> &mut [f32] {
        &mut self.dx
    }

    pub fn dy_mut(&mut self) -> &mut [f32] {
        &mut self.dy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn matches(&self, img: &Image) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    pub fn scaled(&self, s: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            dx: self.dx.iter().map(|v| v * s).collect(),
            dy: self.dy.iter().map(|v| v * s).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Componentwise sum of two equally sized fields.
    pub fn add(&self, other: &FlowField) -> Result<Self> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch("flow fields differ in size".into()));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            dx: self.dx.iter().zip(&other.dx).map(|(a, b)| a + b).collect(),
            dy: self.dy.iter().zip(&other.dy).map(|(a, b)| a + b).collect(),
        })
    }

    /// Per-pixel endpoint magnitudes.
    pub fn magnitudes(&self) -> Vec<f32> {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect()
    }

    /// Root-mean-square endpoint magnitude, optionally ignoring a border.
    pub fn rms(&self, border: usize) -> f64 {
        let mut acc = 0f64;
        let mut n = 0usize;
        for y in border..self.height.saturating_sub(border) {
            for x in border..self.width.saturating_sub(border) {
                let (a, b) = self.at(x, y);
                acc += (a as f64).powi(2) + (b as f64).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (acc / n as f64).sqrt()
        }
    }
}
