//! Mandelbrot cascades: weighted branching on a single type.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::martingale::log_plus;
use crate::population::{check_weight, Generation, MomentMeasure, ReproductionLaw};

/// One atom of a finite-mixture weight law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightOutcome {
    pub prob: f64,
    pub weights: Vec<f64>,
}

/// Law of the offspring weight vector `(u_1, …, u_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CascadeSpec {
    Deterministic { weights: Vec<f64> },
    /// `(U, 1 − U)`.
    UniformSplit,
    /// `(cU, 0)`.
    ScaledUniform { c: f64 },
    Mixture { outcomes: Vec<WeightOutcome> },
}

/// Cascade law on the single type `()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeLaw {
    spec: CascadeSpec,
}

const NORMALISATION_TOL: f64 = 1e-12;

fn mass(ws: &[f64]) -> f64 {
    ws.iter().sum()
}

impl CascadeLaw {
    /// Validates the spec; with `normalized` the mean offspring mass must be 1.
    pub fn new(spec: CascadeSpec, normalized: bool) -> Result<Self> {
        match &spec {
            CascadeSpec::Deterministic { weights } => {
                weights.iter().try_for_each(|w| check_weight(*w))?;
            }
            CascadeSpec::UniformSplit => {}
            CascadeSpec::ScaledUniform { c } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidArgument(format!("scale must be positive, got {c}")));
                }
            }
            CascadeSpec::Mixture { outcomes } => {
                if outcomes.is_empty() {
                    return Err(Error::InvalidArgument("mixture needs at least one outcome".into()));
                }
                let total: f64 = outcomes.iter().map(|o| o.prob).sum();
                if outcomes.iter().any(|o| !(o.prob >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("mixture probabilities must sum to 1 (sum {total})")));
                }
                for o in outcomes {
                    o.weights.iter().try_for_each(|w| check_weight(*w))?;
                }
            }
        }
        let law = Self { spec };
        if normalized && (law.mean_mass() - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "mean offspring mass is {}, expected 1",
                law.mean_mass()
            )));
        }
        Ok(law)
    }

    pub fn uniform_split() -> Self {
        Self { spec: CascadeSpec::UniformSplit }
    }

    pub fn scaled_uniform(c: f64) -> Result<Self> {
        Self::new(CascadeSpec::ScaledUniform { c }, false)
    }

    pub fn deterministic(weights: Vec<f64>) -> Result<Self> {
        Self::new(CascadeSpec::Deterministic { weights }, false)
    }

    pub fn spec(&self) -> &CascadeSpec {
        &self.spec
    }

    fn mixture_expect(&self, h: impl Fn(&[f64]) -> f64) -> Option<f64> {
        match &self.spec {
            CascadeSpec::Deterministic { weights } => Some(h(weights)),
            CascadeSpec::Mixture { outcomes } => Some(outcomes.iter().map(|o| o.prob * h(&o.weights)).sum()),
            _ => None,
        }
    }

    /// `E Σ u_i`.
    pub fn mean_mass(&self) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => 1.0,
            CascadeSpec::ScaledUniform { c } => c / 2.0,
            _ => self.mixture_expect(mass).unwrap(),
        }
    }

    /// `E Σ u_i^q` for `q > 0`.
    pub fn sum_of_powers(&self, q: f64) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => 2.0 / (q + 1.0),
            CascadeSpec::ScaledUniform { c } => c.powf(q) / (q + 1.0),
            _ => self
                .mixture_expect(|ws| ws.iter().filter(|w| **w > 0.0).map(|w| w.powf(q)).sum())
                .unwrap(),
        }
    }

    /// `E (Σ u_i)^q`.
    pub fn mass_moment(&self, q: f64) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => 1.0,
            CascadeSpec::ScaledUniform { c } => c.powf(q) / (q + 1.0),
            _ => self.mixture_expect(|ws| mass(ws).powf(q)).unwrap(),
        }
    }

    /// `E (Σ u_i) log₊(Σ u_i)`.
    pub fn mass_log_mass(&self) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => 0.0,
            CascadeSpec::ScaledUniform { c } => {
                if c <= 1.0 {
                    0.0
                } else {
                    (c * c / 2.0 * c.ln() - c * c / 4.0 + 0.25) / c
                }
            }
            _ => self.mixture_expect(|ws| mass(ws) * log_plus(mass(ws))).unwrap(),
        }
    }

    /// `E Σ u_i log₊ u_i`.
    pub fn sum_u_log_plus_u(&self) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => 0.0,
            // a single non-zero child, so this equals the mass term
            CascadeSpec::ScaledUniform { .. } => self.mass_log_mass(),
            _ => self.mixture_expect(|ws| ws.iter().map(|w| w * log_plus(*w)).sum()).unwrap(),
        }
    }

    /// `E Σ u_i log u_i` (zero weights contribute nothing).
    pub fn sum_u_log_u(&self) -> f64 {
        match self.spec {
            CascadeSpec::UniformSplit => -0.5,
            CascadeSpec::ScaledUniform { c } => c / 2.0 * c.ln() - c / 4.0,
            _ => self
                .mixture_expect(|ws| ws.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum())
                .unwrap(),
        }
    }
}

impl ReproductionLaw for CascadeLaw {
    type Type = ();

    fn sample_into<R: Rng + ?Sized>(&self, _x: &(), rng: &mut R, out: &mut Vec<(f64, ())>) -> f64 {
        match &self.spec {
            CascadeSpec::Deterministic { weights } => out.extend(weights.iter().map(|w| (*w, ()))),
            CascadeSpec::UniformSplit => {
                let u: f64 = rng.random();
                out.push((u, ()));
                out.push((1.0 - u, ()));
            }
            CascadeSpec::ScaledUniform { c } => {
                let u: f64 = rng.random();
                out.push((c * u, ()));
                out.push((0.0, ()));
            }
            CascadeSpec::Mixture { outcomes } => {
                let mut r: f64 = rng.random();
                let mut pick = &outcomes[outcomes.len() - 1];
                for o in outcomes {
                    if r < o.prob {
                        pick = o;
                        break;
                    }
                    r -= o.prob;
                }
                out.extend(pick.weights.iter().map(|w| (*w, ())));
            }
        }
        0.0
    }
}

impl MomentMeasure for CascadeLaw {
    fn moment_atoms(&self, _x: &(), order: f64) -> Vec<((), f64)> {
        vec![((), self.sum_of_powers(order))]
    }
}

/// `G_n(1)` for each supplied generation.
pub fn cascade_martingale_mass<'a, I>(generations: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a Generation<()>>,
{
    generations.into_iter().map(|g| g.total_mass()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{simulate, SimOptions};
    use crate::rng::derive_stream;

    #[test]
    fn closed_forms_of_the_named_specs() {
        let u = CascadeLaw::uniform_split();
        assert_eq!(u.sum_of_powers(2.0), 2.0 / 3.0);
        assert_eq!(u.mean_mass(), 1.0);
        let s = CascadeLaw::scaled_uniform(2.0).unwrap();
        assert_eq!(s.sum_of_powers(2.0), 4.0 / 3.0);
        assert_eq!(s.mean_mass(), 1.0);
        assert!((s.sum_u_log_u() - (2f64.ln() - 0.5)).abs() < 1e-15);
        // ∫_0^1 2u log₊(2u) du = (1/2)∫_1^2 v ln v dv = (2 ln 2 − 3/4)/2
        assert!((s.mass_log_mass() - (2.0 * 2f64.ln() - 0.75) / 2.0).abs() < 1e-15);
        let d = CascadeLaw::deterministic(vec![0.5, 0.5]).unwrap();
        assert_eq!(d.sum_of_powers(2.0), 0.5);
        assert_eq!(d.mass_moment(2.0), 1.0);
    }

    #[test]
    fn normalisation_flag_is_enforced() {
        assert!(CascadeLaw::new(CascadeSpec::ScaledUniform { c: 3.0 }, true).is_err());
        assert!(CascadeLaw::new(CascadeSpec::ScaledUniform { c: 2.0 }, true).is_ok());
        let mix = CascadeSpec::Mixture {
            outcomes: vec![
                WeightOutcome { prob: 0.5, weights: vec![1.5] },
                WeightOutcome { prob: 0.5, weights: vec![0.25, 0.25] },
            ],
        };
        assert!(CascadeLaw::new(mix, true).is_ok());
    }

    #[test]
    fn binary_halves_keep_unit_mass() {
        let law = CascadeLaw::deterministic(vec![0.5, 0.5]).unwrap();
        let mut masses = Vec::new();
        simulate(&law, Generation::single(()), 10, &mut derive_stream(1, 0), SimOptions::default(), |g| {
            masses.push(g.total_mass())
        })
        .unwrap();
        assert_eq!(masses, vec![1.0; 11]);
    }

    #[test]
    fn uniform_split_conserves_first_generation_mass() {
        let law = CascadeLaw::uniform_split();
        let mut rng = derive_stream(5, 0);
        for _ in 0..1000 {
            let traj = simulate(&law, Generation::single(()), 1, &mut rng, SimOptions::retained(), |_| {}).unwrap();
            assert_eq!(cascade_martingale_mass(traj.generations()), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn uniform_split_second_moment_kernel() {
        use crate::kernels::{build_mean_kernel, TypeGrid};
        let k = build_mean_kernel(&CascadeLaw::uniform_split(), &TypeGrid::finite(1), 2.0).unwrap();
        assert_eq!(k.matrix()[(0, 0)], 2.0 / 3.0);
    }
}
