//! Reproduction laws: samplers for the progeny point process together with
//! their exact moment measures where available.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a law bounds the (possibly infinite) progeny it emits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncationPolicy {
    /// The progeny point process is almost surely finite.
    ExactFinite,
    /// Each call discards a tail of total offspring mass at most `epsilon`.
    TailBounded { epsilon: f64 },
}

impl TruncationPolicy {
    pub fn bound(&self) -> f64 {
        match self {
            TruncationPolicy::ExactFinite => 0.0,
            TruncationPolicy::TailBounded { epsilon } => *epsilon,
        }
    }
}

/// Progeny kernel `K(x, ·)` of a weighted branching process.
pub trait ReproductionLaw: Sync {
    type Type: Clone + Send + Sync + std::fmt::Debug;

    fn truncation(&self) -> TruncationPolicy {
        TruncationPolicy::ExactFinite
    }

    /// Appends one draw of `(u_i, Y_i)` to `out` and returns the offspring
    /// mass discarded by truncation (zero for finite laws).
    fn sample_into<R: Rng + ?Sized>(
        &self,
        x: &Self::Type,
        rng: &mut R,
        out: &mut Vec<(f64, Self::Type)>,
    ) -> f64;
}

/// Exact moment measures `A ↦ E Σ u_i^order 1{Y_i ∈ A}` as finite atom lists.
pub trait MomentMeasure: ReproductionLaw {
    fn moment_atoms(&self, x: &Self::Type, order: f64) -> Vec<(Self::Type, f64)>;
}

/// One validated draw from a reproduction law.
#[derive(Debug, Clone, PartialEq)]
pub struct Progeny<T> {
    pub children: Vec<(f64, T)>,
    pub discarded_mass: f64,
}

/// Rejects negative or non-finite offspring factors.
pub fn check_weight(u: f64) -> Result<()> {
    if u.is_finite() && u >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidWeight { value: u })
    }
}

pub(crate) fn check_discarded(discarded: f64, policy: TruncationPolicy) -> Result<()> {
    let bound = policy.bound();
    if discarded > bound || discarded.is_nan() {
        Err(Error::TruncationViolated { discarded, bound })
    } else {
        Ok(())
    }
}

/// Samples the progeny of an individual of type `x`.
pub fn sample_progeny<L: ReproductionLaw, R: Rng + ?Sized>(
    law: &L,
    x: &L::Type,
    rng: &mut R,
) -> Result<Progeny<L::Type>> {
    let mut children = Vec::new();
    let discarded_mass = law.sample_into(x, rng, &mut children);
    for (u, _) in &children {
        check_weight(*u)?;
    }
    check_discarded(discarded_mass, law.truncation())?;
    Ok(Progeny { children, discarded_mass })
}

/// A deterministic offspring list drawn with probability `prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome<T> {
    pub prob: f64,
    pub children: Vec<(f64, T)>,
}

/// Finite-type law whose progeny is a finite mixture of deterministic lists.
///
/// Types are the indices `0..outcomes.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteLaw {
    outcomes: Vec<Vec<Outcome<usize>>>,
}

impl FiniteLaw {
    pub fn new(outcomes: Vec<Vec<Outcome<usize>>>) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::InvalidArgument("finite law needs at least one type".into()));
        }
        for (x, row) in outcomes.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidArgument(format!("type {x} has no outcomes")));
            }
            let total: f64 = row.iter().map(|o| o.prob).sum();
            if row.iter().any(|o| !(o.prob >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "outcome probabilities of type {x} must be non-negative and sum to 1 (sum {total})"
                )));
            }
            for o in row {
                for &(u, y) in &o.children {
                    check_weight(u)?;
                    if y >= n {
                        return Err(Error::InvalidArgument(format!(
                            "child type {y} outside 0..{n}"
                        )));
                    }
                }
            }
        }
        Ok(Self { outcomes })
    }

    /// Every type reproduces deterministically with the given list.
    pub fn deterministic(lists: Vec<Vec<(f64, usize)>>) -> Result<Self> {
        Self::new(
            lists
                .into_iter()
                .map(|children| vec![Outcome { prob: 1.0, children }])
                .collect(),
        )
    }

    /// One child of weight 1 and the same type, on `n_types` types.
    pub fn identity(n_types: usize) -> Result<Self> {
        Self::deterministic((0..n_types).map(|x| vec![(1.0, x)]).collect())
    }

    /// Single-child law moving along the Markov matrix `transition` with unit weights.
    pub fn markov_chain(transition: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            transition
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(y, &p)| Outcome { prob: p, children: vec![(1.0, y)] })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn n_types(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self, x: usize) -> &[Outcome<usize>] {
        &self.outcomes[x]
    }
}

impl ReproductionLaw for FiniteLaw {
    type Type = usize;

    fn sample_into<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R, out: &mut Vec<(f64, usize)>) -> f64 {
        let row = &self.outcomes[*x];
        let chosen = if row.len() == 1 {
            &row[0]
        } else {
            let mut r: f64 = rng.random();
            let mut pick = &row[row.len() - 1];
            for o in row {
                if r < o.prob {
                    pick = o;
                    break;
                }
                r -= o.prob;
            }
            pick
        };
        out.extend_from_slice(&chosen.children);
        0.0
    }
}

impl MomentMeasure for FiniteLaw {
    fn moment_atoms(&self, x: &usize, order: f64) -> Vec<(usize, f64)> {
        let mut mass = vec![0.0; self.n_types()];
        for o in &self.outcomes[*x] {
            for &(u, y) in &o.children {
                if u > 0.0 {
                    mass[y] += o.prob * u.powf(order);
                }
            }
        }
        mass.into_iter().enumerate().filter(|(_, m)| *m > 0.0).collect()
    }
}

/// Uniform stick-breaking on a single type: `u_i = V_i Π_{j<i}(1 − V_j)` with
/// i.i.d. `V ~ Uniform(0,1)`. The progeny is infinite, so the sampler stops
/// once the remaining stick falls below `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickBreakingLaw {
    epsilon: f64,
}

impl StickBreakingLaw {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "stick-breaking tail bound must lie in (0,1), got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

impl ReproductionLaw for StickBreakingLaw {
    type Type = ();

    fn truncation(&self) -> TruncationPolicy {
        TruncationPolicy::TailBounded { epsilon: self.epsilon }
    }

    fn sample_into<R: Rng + ?Sized>(&self, _x: &(), rng: &mut R, out: &mut Vec<(f64, ())>) -> f64 {
        let mut remaining = 1.0;
        while remaining > self.epsilon {
            let v: f64 = rng.random();
            out.push((remaining * v, ()));
            remaining *= 1.0 - v;
        }
        remaining
    }
}

impl MomentMeasure for StickBreakingLaw {
    // E Σ u_i^q = E V^q / (1 − E (1−V)^q) = 1/q for uniform V.
    fn moment_atoms(&self, _x: &(), order: f64) -> Vec<((), f64)> {
        vec![((), 1.0 / order)]
    }
}
