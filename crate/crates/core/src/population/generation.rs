use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// A weighted, typed particle.
///
/// The label is stored compactly as the index of the parent in the previous
/// generation plus the child rank; [`crate::population::Trajectory::label`]
/// rebuilds the full Ulam-Harris word when ancestry is retained. Roots store
/// their own index as `parent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual<T> {
    pub parent: u32,
    pub rank: u32,
    pub weight: f64,
    pub typ: T,
}

/// The weighted empirical measure `G_n = Σ_e w_e δ_{X_e}` of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation<T> {
    pub index: usize,
    pub particles: Vec<Individual<T>>,
}

impl<T> Generation<T> {
    /// Generation 0 made of the given `(weight, type)` atoms.
    pub fn initial(atoms: Vec<(f64, T)>) -> Result<Self> {
        let particles = atoms
            .into_iter()
            .enumerate()
            .map(|(i, (w, typ))| {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidWeight { value: w });
                }
                Ok(Individual { parent: i as u32, rank: 0, weight: w, typ })
            })
            .collect::<Result<_>>()?;
        Ok(Self { index: 0, particles })
    }

    /// `δ_x` with unit weight.
    pub fn single(typ: T) -> Self {
        Self { index: 0, particles: vec![Individual { parent: 0, rank: 0, weight: 1.0, typ }] }
    }

    pub fn empty(index: usize) -> Self {
        Self { index, particles: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// `G_n(1)`.
    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).collect::<CompensatedSum>().value()
    }

    /// `G_n(f) = Σ_e w_e f(X_e)`.
    pub fn integrate<F: Fn(&T) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for p in &self.particles {
            let v = f(&p.typ);
            if !v.is_finite() {
                return Err(Error::NonFinite { value: v, context: "integrating a generation" });
            }
            acc.add(p.weight * v);
        }
        Ok(acc.value())
    }
}

impl<T: Clone> Generation<T> {
    /// `G_n^{(p)}`: every weight raised to the power `p`.
    pub fn pth_power_measure(&self, p: f64) -> Self {
        Self {
            index: self.index,
            particles: self
                .particles
                .iter()
                .map(|q| Individual { weight: q.weight.powf(p), ..q.clone() })
                .collect(),
        }
    }
}

/// Free-function form of [`Generation::integrate`].
pub fn integrate<T, F: Fn(&T) -> f64>(g: &Generation<T>, f: F) -> Result<f64> {
    g.integrate(f)
}

/// Free-function form of [`Generation::pth_power_measure`].
pub fn pth_power_measure<T: Clone>(g: &Generation<T>, p: f64) -> Generation<T> {
    g.pth_power_measure(p)
}
