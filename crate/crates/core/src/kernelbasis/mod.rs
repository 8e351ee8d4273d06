//! Blur-kernel ensembles, their PCA basis, and per-region weights that
//! recompose spatially varying kernels.

mod eigen;
mod kernel;
mod pca;
mod weights;

pub use eigen::symmetric_eigen;
pub use kernel::Kernel;
pub use pca::{build_pca_basis, compose_kernel, KernelBasis, MAX_COMPONENTS};
pub use weights::{region_of, sparsity_penalty, RegionWeightField};
