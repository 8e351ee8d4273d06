use super::optim::{optimize_from, DirectWeights, Optimized};
use super::{init_gaussians, RestoreConfig};
use crate::error::Result;
use crate::imgcore::Image;
use crate::kernelbasis::KernelBasis;
use crate::tiltcorrect::{correct_reference, detilt_frames};

#[derive(Debug, Clone)]
pub struct RestoreOutput {
    /// Tilt-corrected reference the Gaussians were initialized from.
    pub corrected: Image,
    /// Frames after per-frame alignment to `corrected`.
    pub aligned: Vec<Image>,
    pub optimized: Optimized,
}

/// Full mitigation: tilt-correct the reference, align every frame to it,
/// then fit Gaussians and blur weights. A single frame skips the tilt stage.
pub fn restore_sequence(
    frames: &[Image],
    basis: &KernelBasis,
    config: &RestoreConfig,
    truth: Option<&Image>,
) -> Result<RestoreOutput> {
    config.validate()?;
    let (corrected, aligned) = if frames.len() >= 2 {
        let c = correct_reference(frames, config.reference, &config.flow)?;
        let aligned = detilt_frames(frames, &c.image, &config.flow)?;
        (c.image, aligned)
    } else {
        let f = frames
            .first()
            .ok_or_else(|| crate::Error::InvalidArgument("restoration needs at least one frame".into()))?;
        (f.clone(), vec![f.clone()])
    };
    let set = init_gaussians(&corrected)?;
    let optimized = optimize_from(set, &aligned, basis, config, &DirectWeights, truth)?;
    Ok(RestoreOutput {
        corrected,
        aligned,
        optimized,
    })
}
