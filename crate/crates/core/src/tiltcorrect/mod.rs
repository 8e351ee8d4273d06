//! Multi-frame tilt correction: flow from a reference to every frame,
//! averaged under the zero-mean tilt prior, then used to warp the reference
//! back to the undistorted geometry.

mod flow;
mod warp;

pub use flow::{estimate_flow, FlowConfig, FlowEstimate};
pub use warp::warp_image;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{FlowField, Image};

/// Per-pixel arithmetic mean, reduced in list order.
pub fn average_flows(flows: &[FlowField]) -> Result<FlowField> {
    let first = flows
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of flows".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut sx = vec![0f64; w * h];
    let mut sy = vec![0f64; w * h];
    for f in flows {
        if f.width() != w || f.height() != h {
            return Err(Error::DimensionMismatch("flows differ in size".into()));
        }
        for (a, &b) in sx.iter_mut().zip(f.dx()) {
            *a += b as f64;
        }
        for (a, &b) in sy.iter_mut().zip(f.dy()) {
            *a += b as f64;
        }
    }
    let n = flows.len() as f64;
    FlowField::from_planes(
        w,
        h,
        sx.into_iter().map(|v| (v / n) as f32).collect(),
        sy.into_iter().map(|v| (v / n) as f32).collect(),
    )
}

/// Which image plays the role of the reference `I_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Frame(usize),
    TemporalMedian,
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Frame(0)
    }
}

/// Per-pixel median over frames (lower median for even counts).
pub fn temporal_median(frames: &[Image]) -> Result<Image> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("median of no frames".into()))?;
    for f in frames {
        first.ensure_same_shape(f)?;
    }
    let mut out = Vec::with_capacity(first.data().len());
    let mut buf = vec![0f32; frames.len()];
    for i in 0..first.data().len() {
        for (b, f) in buf.iter_mut().zip(frames) {
            *b = f.data()[i];
        }
        buf.sort_by(|a, b| a.total_cmp(b));
        out.push(buf[(buf.len() - 1) / 2]);
    }
    Image::from_planar(first.width(), first.height(), first.channels(), out)
}

#[derive(Debug, Clone)]
pub struct Correction {
    /// `warp(I_0, mean_flow)`.
    pub image: Image,
    pub mean_flow: FlowField,
    /// `F_{t -> 0}` for every frame, self-flow included.
    pub flows: Vec<FlowField>,
    /// True if any per-frame estimate was flagged.
    pub unreliable: bool,
}

fn flows_from(reference: &Image, frames: &[Image], cfg: &FlowConfig) -> Result<Vec<FlowEstimate>> {
    frames.par_iter().map(|f| estimate_flow(reference, f, cfg)).collect()
}

/// Estimate the flow from the reference to every frame, average, and warp the
/// reference by the mean. Needs at least two frames.
pub fn correct_reference(frames: &[Image], reference: Reference, cfg: &FlowConfig) -> Result<Correction> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "tilt correction needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let base = match reference {
        Reference::Frame(i) => frames
            .get(i)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("reference index {i} out of range 0..{}", frames.len())))?,
        Reference::TemporalMedian => temporal_median(frames)?,
    };
    let estimates = flows_from(&base, frames, cfg)?;
    let unreliable = estimates.iter().any(|e| e.unreliable);
    let flows: Vec<FlowField> = estimates.into_iter().map(|e| e.flow).collect();
    let mean_flow = average_flows(&flows)?;
    let image = warp_image(&base, &mean_flow)?;
    Ok(Correction {
        image,
        mean_flow,
        flows,
        unreliable,
    })
}

/// Bring every frame into the geometry of `reference`: estimate `f_t` with
/// `reference(p + f_t) ~ frame_t(p)` and sample the frame at `p - f_t(p)`.
pub fn detilt_frames(frames: &[Image], reference: &Image, cfg: &FlowConfig) -> Result<Vec<Image>> {
    let estimates = flows_from(reference, frames, cfg)?;
    frames
        .iter()
        .zip(estimates)
        .map(|(f, e)| warp_image(f, &e.flow.negated()))
        .collect()
}
