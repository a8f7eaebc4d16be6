//! Weighted typed populations and their generation-by-generation evolution.

mod generation;
mod label;
mod law;
mod simulate;

pub use generation::{integrate, pth_power_measure, Generation, Individual};
pub use label::Label;
pub use law::{
    check_weight, sample_progeny, FiniteLaw, MomentMeasure, Outcome, Progeny, ReproductionLaw, StickBreakingLaw,
    TruncationPolicy,
};
pub use simulate::{
    advance_generation, lineage_measure, simulate, SimOptions, StepStats, StorageMode, Trajectory,
    DEFAULT_PARTICLE_CAP,
};
