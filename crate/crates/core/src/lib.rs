//! Simulation and verification toolkit for weighted multi-type branching
//! processes.
//!
//! * [`population`] simulates generations `G_n = Σ_e w_e δ_{X_e}` from a
//!   reproduction law.
//! * [`kernels`] builds the mean and p-th moment kernels on finite grids,
//!   extracts Perron data and certifies the constants of the `L^p` bound.
//! * [`martingale`] tracks the Biggins martingale across replicates and
//!   evaluates the `L log L` machinery.
//! * [`zoo`] holds the example models (cascades, random kernel products,
//!   contracting random dynamics, lineage averages).
//! * [`harness`] wires everything into reproducible experiments.

pub mod error;
pub mod harness;
pub mod kernels;
pub mod martingale;
pub mod population;
pub mod rng;
pub mod stats;
pub mod zoo;

pub use error::{Error, Result};
