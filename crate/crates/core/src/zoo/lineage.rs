//! Ergodic averages along lineages.
//!
//! `M_e` is the uniform measure on the types of generations `1..=|e|` of the
//! lineage of `e`, and `A_n = Σ_{|e| = n} w_e M_e`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::population::{Generation, ReproductionLaw, StorageMode, Trajectory};
use crate::stats::CompensatedSum;

/// `(n, A_n(f))` for `n = 1..=horizon`, from a tree-retaining trajectory.
///
/// Each particle carries the running sum of `f` along its lineage, so the
/// cost is linear in the number of particles.
pub fn lineage_average_observable<T, F>(trajectory: &Trajectory<T>, f: F) -> Result<Vec<(usize, f64)>>
where
    T: Clone,
    F: Fn(&T) -> f64,
{
    if trajectory.mode() != StorageMode::TreeRetention {
        return Err(Error::AncestryDiscarded);
    }
    let gens = trajectory.generations();
    let mut out = Vec::with_capacity(gens.len().saturating_sub(1));
    let mut sums: Vec<f64> = Vec::new();
    for (n, g) in gens.iter().enumerate().skip(1) {
        let next: Vec<f64> = g
            .particles
            .iter()
            .map(|p| {
                let base = if n == 1 { 0.0 } else { sums[p.parent as usize] };
                base + f(&p.typ)
            })
            .collect();
        let mut acc = CompensatedSum::new();
        for (p, s) in g.particles.iter().zip(&next) {
            acc.add(p.weight * (s / n as f64));
        }
        let value = acc.value();
        if !value.is_finite() {
            return Err(Error::NonFinite { value, context: "lineage average" });
        }
        out.push((n, value));
        sums = next;
    }
    Ok(out)
}

/// A type of the base law enriched with the lineage sum of `f` and the lineage length.
#[derive(Debug, Clone, PartialEq)]
pub struct PathType<T> {
    pub typ: T,
    pub sum: f64,
    pub len: usize,
}

impl<T> PathType<T> {
    pub fn root(typ: T) -> Self {
        Self { typ, sum: 0.0, len: 0 }
    }

    /// `F(x̄) = Σ(x̄) / |x̄|`.
    pub fn average(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.sum / self.len as f64
        }
    }
}

/// Branching process on lineage-enriched types: children extend the sum by
/// `f(Y_i)` and the length by one, with the base law's weights.
pub struct EnrichedLaw<'a, L, F> {
    base: &'a L,
    f: F,
}

impl<'a, L, F> EnrichedLaw<'a, L, F>
where
    L: ReproductionLaw,
    F: Fn(&L::Type) -> f64 + Sync,
{
    pub fn new(base: &'a L, f: F) -> Self {
        Self { base, f }
    }

    pub fn initial(&self, g0: &Generation<L::Type>) -> Generation<PathType<L::Type>> {
        Generation {
            index: g0.index,
            particles: g0
                .particles
                .iter()
                .map(|p| crate::population::Individual {
                    parent: p.parent,
                    rank: p.rank,
                    weight: p.weight,
                    typ: PathType::root(p.typ.clone()),
                })
                .collect(),
        }
    }
}

impl<L, F> ReproductionLaw for EnrichedLaw<'_, L, F>
where
    L: ReproductionLaw,
    F: Fn(&L::Type) -> f64 + Sync,
{
    type Type = PathType<L::Type>;

    fn truncation(&self) -> crate::population::TruncationPolicy {
        self.base.truncation()
    }

    fn sample_into<R: Rng + ?Sized>(&self, x: &Self::Type, rng: &mut R, out: &mut Vec<(f64, Self::Type)>) -> f64 {
        let mut children = Vec::new();
        let discarded = self.base.sample_into(&x.typ, rng, &mut children);
        out.extend(children.into_iter().map(|(u, y)| {
            let sum = x.sum + (self.f)(&y);
            (u, PathType { typ: y, sum, len: x.len + 1 })
        }));
        discarded
    }
}
