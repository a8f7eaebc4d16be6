//! Matrix representations of the mean and p-th moment kernels, their Perron
//! data, and certified constants for the L^p convergence bound.

mod certify;
mod grid;
mod mean;
mod spectral;

pub use certify::{
    certify_md, estimate_c3, gamma_witness, mixing_constant, psi_norm, theorem1_rhs, BoundInputs, BoundTerms,
    C3Estimate, MDCertificate, C3_FLOOR,
};
pub use grid::{GridPoint, TypeGrid};
pub use mean::{build_mean_kernel, estimate_mean_kernel, kernel_power_apply, MeanKernel, ScaledVector};
pub use spectral::{
    alpha_sequence, alpha_sequence_with_limit, eigen_residuals, estimate_beta, power_iteration, BetaFit, SpectralData,
};
