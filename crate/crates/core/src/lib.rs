//! Simulation and mitigation of atmospheric-turbulence-degraded image
//! sequences with a planar Gaussian-splat scene model.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`turbsim`] degrades a clean image into a frame sequence with smooth
//!    zero-mean tilt and region-wise anisotropic blur.
//! 2. [`kernelbasis`] decomposes a simulated kernel ensemble into a mean
//!    kernel plus orthonormal PCA components.
//! 3. [`tiltcorrect`] estimates flow from a reference frame to every frame
//!    and warps the reference by the mean flow.
//! 4. [`restore`] fits a [`gaussian2d::GaussianSet`] and per-region blur
//!    weights to all frames by minimizing a cyclic consistency loss.
//!
//! `metrics` scores results; `cli` wires the stages into a command-line tool.


pub mod cli;
pub mod error;
pub mod gaussian2d;
pub mod imgcore;
pub mod kernelbasis;
pub mod metrics;
pub mod restore;
pub mod tiltcorrect;
pub mod turbsim;

pub use error::{Error, Result};
