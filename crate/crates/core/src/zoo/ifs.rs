//! Weighted random dynamics on `[0,1]` driven by affine contractions.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cascade::{CascadeLaw, CascadeSpec};
use crate::error::{Error, Result};
use crate::kernels::{
    alpha_sequence, build_mean_kernel, certify_md, estimate_c3, power_iteration, theorem1_rhs, BoundInputs,
    MDCertificate, MeanKernel, SpectralData, TypeGrid,
};
use crate::population::{MomentMeasure, ReproductionLaw};
use crate::stats::{fit_rate, RateFit};

/// `x ↦ a·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    pub fn lipschitz(&self) -> f64 {
        self.a.abs()
    }
}

/// Children get i.i.d. maps drawn from `map_probs` and, independently, weights from `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsLaw {
    maps: Vec<AffineMap>,
    map_probs: Vec<f64>,
    weights: CascadeLaw,
}

impl IfsLaw {
    pub fn new(maps: Vec<AffineMap>, map_probs: Vec<f64>, weights: CascadeSpec) -> Result<Self> {
        if maps.is_empty() || maps.len() != map_probs.len() {
            return Err(Error::InvalidArgument("need one probability per map and at least one map".into()));
        }
        let total: f64 = map_probs.iter().sum();
        if map_probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("map probabilities must sum to 1 (sum {total})")));
        }
        for (i, m) in maps.iter().enumerate() {
            if !(m.a.abs() < 1.0) {
                return Err(Error::InvalidArgument(format!("map {i} is not a contraction (a = {})", m.a)));
            }
            let (lo, hi) = (m.apply(0.0), m.apply(1.0));
            if lo.min(hi) < 0.0 || lo.max(hi) > 1.0 {
                return Err(Error::InvalidArgument(format!("map {i} leaves [0,1]")));
            }
        }
        Ok(Self { maps, map_probs, weights: CascadeLaw::new(weights, false)? })
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn weights(&self) -> &CascadeLaw {
        &self.weights
    }

    /// `max_ζ l_ζ`.
    pub fn max_contraction(&self) -> f64 {
        self.maps.iter().map(AffineMap::lipschitz).fold(0.0, f64::max)
    }

    /// `J(x) = E Σ u_i log₊ u_i` (constant in `x`).
    pub fn j_functional(&self) -> f64 {
        self.weights.sum_u_log_plus_u()
    }

    /// `H_q(x) = E |Σ u_i|^q`.
    pub fn h_functional(&self, q: f64) -> f64 {
        self.weights.mass_moment(q)
    }

    /// `L_q(x) = E Σ u_i^q`.
    pub fn l_functional(&self, q: f64) -> f64 {
        self.weights.sum_of_powers(q)
    }

    /// Smallest `γ̄` with `L_p ≤ γ̄ θ^{p−1} L_1`.
    pub fn gamma_bar(&self, p: f64, theta1: f64) -> f64 {
        self.l_functional(p) / (theta1.powf(p - 1.0) * self.l_functional(1.0))
    }

    fn draw_map<R: Rng + ?Sized>(&self, rng: &mut R) -> &AffineMap {
        if self.maps.len() == 1 {
            return &self.maps[0];
        }
        let mut r: f64 = rng.random();
        for (m, p) in self.maps.iter().zip(&self.map_probs) {
            if r < *p {
                return m;
            }
            r -= p;
        }
        &self.maps[self.maps.len() - 1]
    }
}

impl ReproductionLaw for IfsLaw {
    type Type = f64;

    fn sample_into<R: Rng + ?Sized>(&self, x: &f64, rng: &mut R, out: &mut Vec<(f64, f64)>) -> f64 {
        let mut ws = Vec::new();
        self.weights.sample_into(&(), rng, &mut ws);
        for (u, ()) in ws {
            let m = self.draw_map(rng);
            out.push((u, m.apply(*x)));
        }
        0.0
    }
}

impl MomentMeasure for IfsLaw {
    fn moment_atoms(&self, x: &f64, order: f64) -> Vec<(f64, f64)> {
        let mass = self.weights.sum_of_powers(order);
        self.maps.iter().zip(&self.map_probs).map(|(m, p)| (m.apply(*x), p * mass)).collect()
    }
}

/// Default grid resolution exponent: cells of width `2^{-10}`.
pub const DEFAULT_GRID_EXPONENT: u32 = 10;

/// Killing profile, killed and embedded chains of a non-conservative kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobTransform {
    /// `p(x) = δ_x Q(X) / sup_y δ_y Q(X)`.
    pub killing: Vec<f64>,
    pub sup_mass: f64,
    /// `Q / sup_y δ_y Q(X)`, the sub-Markov kernel of the killed chain.
    pub killed: MeanKernel,
    /// `δ_x Q(·) / δ_x Q(X)` (zero rows where the mass vanishes).
    pub embedded: MeanKernel,
    pub theta0: f64,
    /// Perron root of `Q` computed directly.
    pub theta1: f64,
    /// `|θ_1 − θ_0 · sup mass|`.
    pub identity_gap: f64,
}

pub fn doob_transition(q: &MeanKernel, tol: f64, max_iter: usize) -> Result<DoobTransform> {
    let mass = q.row_masses();
    let sup = mass.max();
    if !(sup > 0.0) {
        return Err(Error::ZeroKernel);
    }
    let killed = MeanKernel::from_matrix(q.matrix() / sup, *q.grid(), q.order())?;
    let mut emb = q.matrix().clone();
    for (i, mut row) in emb.row_iter_mut().enumerate() {
        if mass[i] > 0.0 {
            row /= mass[i];
        }
    }
    let embedded = MeanKernel::from_matrix(emb, *q.grid(), q.order())?;
    let theta0 = power_iteration(&killed, tol, max_iter)?.theta1;
    let theta1 = power_iteration(q, tol, max_iter)?.theta1;
    Ok(DoobTransform {
        killing: mass.iter().map(|m| m / sup).collect(),
        sup_mass: sup,
        killed,
        embedded,
        theta0,
        theta1,
        identity_gap: (theta1 - theta0 * sup).abs(),
    })
}

/// Exact 1-Wasserstein distance between two weighted point sets in `[0,1]`
/// under `d(x,y) = min(|x−y|, 1)`, both normalised to probabilities.
///
/// On `[0,1]` the truncation is inactive, so this is `∫ |F_μ − F_ν|` over the
/// merged breakpoints.
pub fn wasserstein_1d(mu: &[(f64, f64)], nu: &[(f64, f64)]) -> Result<f64> {
    fn normalise(m: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
        let total: f64 = m.iter().map(|a| a.1).sum();
        if m.iter().any(|a| !(a.1 >= 0.0) || !(0.0..=1.0).contains(&a.0)) {
            return Err(Error::InvalidArgument("atoms must lie in [0,1] with non-negative mass".into()));
        }
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("zero-mass measure".into()));
        }
        Ok(m.iter().map(|&(x, w)| (x, w / total)).collect())
    }
    let a = normalise(mu)?;
    let b = normalise(nu)?;
    // both CDFs are accumulated separately so the result is symmetric bit for bit
    let mut events: Vec<(f64, f64, bool)> =
        a.iter().map(|&(x, w)| (x, w, true)).chain(b.iter().map(|&(x, w)| (x, w, false))).collect();
    events.sort_by(|l, r| l.0.total_cmp(&r.0));
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut dist = 0.0;
    let mut prev = events.first().map_or(0.0, |e| e.0);
    for (x, w, first) in events {
        dist += (fa - fb).abs() * (x - prev);
        if first {
            fa += w;
        } else {
            fb += w;
        }
        prev = x;
    }
    Ok(dist)
}

/// Outcome of the α-decay probe on the discretised kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsRateReport {
    pub grid: TypeGrid,
    pub spectral: SpectralData,
    pub alpha: Vec<f64>,
    /// Fit of `log α_n` over the iterates with `α_n` above the discretisation error.
    pub fit: Option<RateFit>,
    /// `log(max contraction) + slack`.
    pub slope_bound: f64,
    /// `h · Lip(f)`.
    pub discretisation_error: f64,
    /// `Some(true)` when the fitted slope respects the bound; `None` when too few
    /// iterates rise above the discretisation error.
    pub rate_ok: Option<bool>,
    pub gamma_bar: f64,
    pub certificate: Option<MDCertificate>,
    /// `(m, n, bound)` triples from the certified constants.
    pub bounds: Vec<(usize, usize, f64)>,
}

/// Slack added to the contraction rate when judging the fitted α slope.
pub const RATE_SLACK: f64 = 0.1;

/// Options of [`ifs_convergence_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub grid_exponent: u32,
    pub n_max: usize,
    pub p: f64,
    /// Progeny draws per grid point for the dispersion constant; `0` skips certification.
    pub c3_budget: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { grid_exponent: DEFAULT_GRID_EXPONENT, n_max: 30, p: 2.0, c3_budget: 0 }
    }
}

/// Discretises the mean kernel, measures `α_n` for `f` with `ψ_1 ≡ 1`, `β = 0`,
/// fits the decay and, when requested, certifies the bound constants.
pub fn ifs_convergence_probe<R: Rng + ?Sized>(
    ifs: &IfsLaw,
    f: impl Fn(f64) -> f64,
    lipschitz: f64,
    options: ProbeOptions,
    rng: &mut R,
) -> Result<IfsRateReport> {
    let grid = TypeGrid::unit_dyadic(options.grid_exponent);
    let h = grid.resolution().unwrap_or(0.0);
    let q = build_mean_kernel(ifs, &grid, 1.0)?;
    let mut sd = power_iteration(&q, 1e-12, 1_000_000)?;
    let fv = DVector::from_iterator(grid.len(), grid.points().into_iter().map(&f));
    let ones = DVector::from_element(grid.len(), 1.0);
    sd.alpha = alpha_sequence(&q, &fv, &sd, &ones, options.n_max)?;
    // snapping errors of size h/2 per step, contracted geometrically, on both sides of the gap
    let discretisation_error = h * lipschitz / (1.0 - ifs.max_contraction());
    let series: Vec<(usize, f64)> = sd
        .alpha
        .iter()
        .enumerate()
        .map(|(i, a)| (i + 1, *a))
        .filter(|(_, a)| *a > discretisation_error)
        .collect();
    let slope_bound = ifs.max_contraction().ln() + RATE_SLACK;
    let fit = if series.len() >= 5 {
        let lo = series[0].0;
        let hi = series[series.len() - 1].0;
        Some(fit_rate(&series, lo..=hi)?)
    } else {
        None
    };
    let rate_ok = match (&fit, sd.alpha.iter().skip(1).all(|a| *a == 0.0)) {
        (_, true) => Some(true),
        (Some(fit), _) => Some(fit.slope <= slope_bound),
        (None, _) => None,
    };
    let gamma_bar = ifs.gamma_bar(options.p, sd.theta1);

    let (certificate, bounds) = if options.c3_budget > 0 {
        let qp = build_mean_kernel(ifs, &grid, options.p)?;
        let c3 = estimate_c3(ifs, &q, &ones, &ones, options.p, options.c3_budget, rng)?;
        let cert = certify_md(&q, &qp, &sd, &ones, &ones, options.n_max, c3.value)?;
        let eta_f = sd.eta_f(&fv);
        let inputs = BoundInputs {
            f_norm: fv.amax(),
            eta_f_norm: eta_f.amax(),
            g0_p_psi2p: 1.0,
            g0_psi1_p: 1.0,
        };
        let mut bounds = Vec::new();
        for m in [2usize, 5, 10] {
            for n in [2usize, 5, 10] {
                if n <= options.n_max {
                    bounds.push((m, n, theorem1_rhs(&cert, &sd, &inputs, m, n)?.total));
                }
            }
        }
        (Some(cert), bounds)
    } else {
        (None, Vec::new())
    };

    Ok(IfsRateReport {
        grid,
        alpha: sd.alpha.clone(),
        spectral: sd,
        fit,
        slope_bound,
        discretisation_error,
        rate_ok,
        gamma_bar,
        certificate,
        bounds,
    })
}
