//! Products of random kernels along the branches of a Galton-Watson tree.
//!
//! Every particle carries the running product `A_{e_1} A_{e_1 e_2} ⋯ A_e` as its
//! type; all weights are 1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MeanKernel;
use crate::population::{Generation, ReproductionLaw};

/// `e^{log_scale} · matrix`, renormalised to keep entries representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledKernel {
    pub matrix: DMatrix<f64>,
    pub log_scale: f64,
}

const RESCALE_HI: f64 = 1e100;
const RESCALE_LO: f64 = 1e-100;

impl ScaledKernel {
    pub fn identity(d: usize) -> Self {
        Self { matrix: DMatrix::identity(d, d), log_scale: 0.0 }
    }

    /// `self · a`, renormalised when the kernel norm leaves `[1e-100, 1e100]`.
    pub fn then(&self, a: &DMatrix<f64>) -> Self {
        let mut matrix = &self.matrix * a;
        let mut log_scale = self.log_scale;
        let norm = kernel_norm(&matrix);
        if norm > RESCALE_HI || (norm > 0.0 && norm < RESCALE_LO) {
            matrix.unscale_mut(norm);
            log_scale += norm.ln();
        }
        Self { matrix, log_scale }
    }

    /// `δ_x (product) f`.
    pub fn evaluate(&self, x: usize, f: &DVector<f64>) -> f64 {
        self.matrix.row(x).transpose().dot(f) * self.log_scale.exp()
    }
}

/// `|||A||| = max_x Σ_y |A(x, y)|`.
pub fn kernel_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// One atom of the offspring distribution: the list of kernels handed to the children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelOutcome {
    pub prob: f64,
    pub kernels: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProductLaw {
    dim: usize,
    outcomes: Vec<KernelOutcome>,
}

impl KernelProductLaw {
    pub fn new(dim: usize, outcomes: Vec<KernelOutcome>) -> Result<Self> {
        if dim == 0 || outcomes.is_empty() {
            return Err(Error::InvalidArgument("kernel law needs a positive dimension and an outcome".into()));
        }
        let total: f64 = outcomes.iter().map(|o| o.prob).sum();
        if outcomes.iter().any(|o| !(o.prob >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("kernel outcome probabilities must sum to 1 (sum {total})")));
        }
        for o in &outcomes {
            for a in &o.kernels {
                if a.nrows() != dim || a.ncols() != dim {
                    return Err(Error::Dimension { expected: dim, got: a.nrows().max(a.ncols()) });
                }
                if !kernel_norm(a).is_finite() {
                    return Err(Error::InvalidArgument("kernel with infinite norm".into()));
                }
            }
        }
        Ok(Self { dim, outcomes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[KernelOutcome] {
        &self.outcomes
    }

    /// `P = E Σ_i A_i`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.dim, self.dim);
        for o in &self.outcomes {
            for a in &o.kernels {
                p += a * o.prob;
            }
        }
        p
    }

    /// `P` as a mean kernel; only defined for non-negative kernels.
    pub fn mean_kernel(&self) -> Result<MeanKernel> {
        MeanKernel::from_matrix(self.mean_matrix(), crate::kernels::TypeGrid::finite(self.dim), 1.0)
    }

    /// Generation 0: one particle carrying the identity.
    pub fn initial(&self) -> Generation<ScaledKernel> {
        Generation::single(ScaledKernel::identity(self.dim))
    }
}

impl ReproductionLaw for KernelProductLaw {
    type Type = ScaledKernel;

    fn sample_into<R: Rng + ?Sized>(&self, x: &ScaledKernel, rng: &mut R, out: &mut Vec<(f64, ScaledKernel)>) -> f64 {
        let pick = if self.outcomes.len() == 1 {
            &self.outcomes[0]
        } else {
            let mut r: f64 = rng.random();
            let mut pick = &self.outcomes[self.outcomes.len() - 1];
            for o in &self.outcomes {
                if r < o.prob {
                    pick = o;
                    break;
                }
                r -= o.prob;
            }
            pick
        };
        out.extend(pick.kernels.iter().map(|a| (1.0, x.then(a))));
        0.0
    }
}

/// `G_n(F_{x,f}) = Σ_e δ_x (Π A) f` for each supplied generation.
pub fn kernel_product_observable<'a, I>(generations: I, x: usize, f: &DVector<f64>) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Generation<ScaledKernel>>,
{
    generations
        .into_iter()
        .map(|g| {
            if x >= f.len() {
                return Err(Error::Dimension { expected: f.len(), got: x + 1 });
            }
            let v = g.integrate(|k| k.evaluate(x, f))?;
            Ok(v)
        })
        .collect()
}
