//! The example models: cascades, random kernel products, contracting random
//! dynamics on the interval, and lineage averages.
mod cascade;
mod ifs;
mod kernel_product;
mod lineage;

pub use cascade::{cascade_martingale_mass, CascadeLaw, CascadeSpec, WeightOutcome};
pub use ifs::{
    doob_transition, ifs_convergence_probe, wasserstein_1d, AffineMap, DoobTransform, IfsLaw, IfsRateReport,
    ProbeOptions, DEFAULT_GRID_EXPONENT, RATE_SLACK,
};
pub use kernel_product::{kernel_norm, kernel_product_observable, KernelOutcome, KernelProductLaw, ScaledKernel};
pub use lineage::{lineage_average_observable, EnrichedLaw, PathType};
