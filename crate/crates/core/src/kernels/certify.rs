//! Mixing/dispersion constants for the L^p bound and evaluation of the bound itself.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::GridPoint;
use super::mean::MeanKernel;
use super::spectral::{power_iteration, SpectralData};
use crate::error::{Error, Result};
use crate::population::ReproductionLaw;
use crate::stats::{MeanEstimate, Z_99};

/// Smallest dispersion constant ever reported; the bound needs `c3 > 0`.
pub const C3_FLOOR: f64 = 1e-12;

/// Number of trailing γ ratios inspected for the geometric tail.
const TAIL_WINDOW: usize = 8;

/// Certified constants of the mixing/dispersion assumption on a finite grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MDCertificate {
    pub p: f64,
    pub theta1: f64,
    pub beta: u32,
    pub psi1: Vec<f64>,
    /// Dispersion profile; may vanish where the one-step dispersion does.
    pub psi2: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c0: f64,
    /// `γ_0, …, γ_N`.
    pub gamma: Vec<f64>,
    /// Geometric ratio used to extrapolate `γ` beyond `N`.
    pub tail_ratio: f64,
    /// Envelope value at `N`: `γ_k ≤ tail_anchor · tail_ratio^{k−N}` for `k > N`.
    pub tail_anchor: f64,
}

impl MDCertificate {
    pub fn horizon(&self) -> usize {
        self.gamma.len() - 1
    }

    /// `Γ_m = Σ_{k ≥ m} γ_k`, exact up to the horizon and geometric beyond.
    pub fn gamma_tail(&self, m: usize) -> f64 {
        let n = self.horizon();
        let anchor = self.tail_anchor;
        let r = self.tail_ratio;
        if m > n {
            return anchor * r.powi((m - n) as i32) / (1.0 - r);
        }
        let head: f64 = self.gamma[m..].iter().rev().sum();
        head + anchor * r / (1.0 - r)
    }
}

/// `γ_n = max_x (θ^{-pn} ((Q^{(p)})^n ψ_2^p)(x) / ψ_2^p(x))^{1/p}` for `n = 0..=n_max`.
///
/// Points where `ψ_2` vanishes are admissible only if every iterate vanishes there too.
pub fn gamma_witness(kp: &MeanKernel, theta1: f64, psi2: &DVector<f64>, n_max: usize) -> Result<Vec<f64>> {
    let d = kp.dim();
    if psi2.len() != d {
        return Err(Error::Dimension { expected: d, got: psi2.len() });
    }
    if psi2.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("psi2 must be finite and non-negative".into()));
    }
    let p = kp.order();
    let base = psi2.map(|v| v.powf(p));
    let scale = theta1.powf(p);
    let mut v = base.clone();
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            v = kp.apply(&v) / scale;
        }
        let mut g: f64 = 0.0;
        for x in 0..d {
            if base[x] > 0.0 {
                g = g.max(v[x] / base[x]);
            } else if v[x] > 0.0 {
                return Err(Error::NotCertifiable(format!(
                    "psi2 vanishes at grid point {x} but the {n}-step p-moment does not"
                )));
            }
        }
        out.push(g.powf(1.0 / p));
    }
    Ok(out)
}

/// Geometric envelope `(r, anchor)` of the γ tail.
///
/// With the asymptotic rate `r` known (from the Perron root of `Q^{(p)}`), the
/// anchor is the largest `γ_k r^{N−k}` over the trailing window, which absorbs
/// transient oscillations from sub-dominant eigenvalues. Without it, `r` is the
/// largest consecutive ratio in the window and the anchor is `γ_N`.
fn tail_envelope(gamma: &[f64], rate: Option<f64>) -> Result<(f64, f64)> {
    let n = gamma.len() - 1;
    if gamma[n] == 0.0 {
        return Ok((0.0, 0.0));
    }
    if n == 0 {
        return Err(Error::NotCertifiable("horizon too short to extrapolate gamma".into()));
    }
    let start = n.saturating_sub(TAIL_WINDOW);
    if let Some(r) = rate {
        if r >= 1.0 || !r.is_finite() {
            return Err(Error::NotSummable { ratio: r });
        }
        let anchor = (start..=n).map(|k| gamma[k] * r.powi((n - k) as i32)).fold(0.0, f64::max);
        return Ok((r, anchor));
    }
    let mut r: f64 = 0.0;
    for k in start..n {
        if gamma[k] == 0.0 {
            return Err(Error::NotSummable { ratio: f64::INFINITY });
        }
        r = r.max(gamma[k + 1] / gamma[k]);
    }
    if r >= 1.0 || !r.is_finite() {
        return Err(Error::NotSummable { ratio: r });
    }
    Ok((r, gamma[n]))
}

/// `c_1 = max_{n ≤ N, x} n^{-β} θ^{-n} (Q^n ψ_1)(x) / ψ_1(x)`; `n = 0` enters only when `β = 0`.
pub fn mixing_constant(k1: &MeanKernel, theta1: f64, beta: u32, psi1: &DVector<f64>, n_max: usize) -> Result<f64> {
    let d = k1.dim();
    if psi1.len() != d {
        return Err(Error::Dimension { expected: d, got: psi1.len() });
    }
    if psi1.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("psi1 must be finite and strictly positive".into()));
    }
    let mut c1: f64 = if beta == 0 { 1.0 } else { 0.0 };
    let mut v = psi1.clone();
    for n in 1..=n_max {
        v = k1.apply(&v) / theta1;
        let poly = (n as f64).powi(-(beta as i32));
        for x in 0..d {
            c1 = c1.max(poly * v[x] / psi1[x]);
        }
    }
    Ok(c1)
}

/// Monte Carlo estimate of the one-step dispersion constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C3Estimate {
    /// Upper 99% bound, floored at [`C3_FLOOR`].
    pub value: f64,
    /// Point estimate at the maximising (grid point, test function).
    pub mean: f64,
    pub stderr: f64,
    pub worst_point: usize,
    pub test_functions: usize,
    pub budget: usize,
}

/// Largest grid on which all sign patterns `±ψ_1` are tried; larger grids
/// fall back to `ψ_1` and the scaled cell indicators.
const VERTEX_ENUMERATION_LIMIT: usize = 8;

/// A test function given by its non-zero entries.
type SparseFn = Vec<(usize, f64)>;

fn test_functions(psi1: &DVector<f64>, support: &[usize]) -> Vec<SparseFn> {
    let d = psi1.len();
    if d <= VERTEX_ENUMERATION_LIMIT {
        // |·|^p is convex in g, so the sup over ‖g‖_ψ1 ≤ 1 sits on a vertex; ±g are equivalent.
        (0..1usize << (d - 1))
            .map(|mask| {
                (0..d)
                    .map(|j| (j, if j > 0 && mask >> (j - 1) & 1 == 1 { -psi1[j] } else { psi1[j] }))
                    .collect()
            })
            .collect()
    } else {
        // indicators of cells the progeny never reaches have zero dispersion
        let mut out: Vec<SparseFn> = vec![(0..d).map(|j| (j, psi1[j])).collect()];
        out.extend(support.iter().map(|&j| vec![(j, psi1[j])]));
        out
    }
}

/// Estimates `sup_{x, g} E|Σ u_i g(Y_i) − Qg(x)|^p / (ψ_2(x)^p ‖g‖_{ψ_1}^p)` from
/// `budget` progeny draws per grid point, reporting the upper 99% bound.
pub fn estimate_c3<L, R>(
    law: &L,
    k1: &MeanKernel,
    psi1: &DVector<f64>,
    psi2: &DVector<f64>,
    p: f64,
    budget: usize,
    rng: &mut R,
) -> Result<C3Estimate>
where
    L: ReproductionLaw,
    L::Type: GridPoint,
    R: Rng + ?Sized,
{
    let grid = *k1.grid();
    let d = k1.dim();
    if psi1.len() != d || psi2.len() != d {
        return Err(Error::Dimension { expected: d, got: psi1.len().min(psi2.len()) });
    }
    if budget < 2 {
        return Err(Error::InvalidArgument("dispersion estimate needs at least two draws".into()));
    }
    let mut best = C3Estimate { value: 0.0, mean: 0.0, stderr: 0.0, worst_point: 0, test_functions: 0, budget };
    let mut best_upper = f64::NEG_INFINITY;
    let mut buf = Vec::new();
    for x in 0..d {
        let typ = L::Type::from_cell(&grid, x);
        let mut draws: Vec<Vec<(usize, f64)>> = Vec::with_capacity(budget);
        for _ in 0..budget {
            buf.clear();
            law.sample_into(&typ, rng, &mut buf);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(buf.len());
            for (u, y) in buf.drain(..) {
                crate::population::check_weight(u)?;
                let j = y.cell(&grid).ok_or_else(|| Error::OffGrid(format!("{y:?}")))?;
                match row.iter_mut().find(|(c, _)| *c == j) {
                    Some(slot) => slot.1 += u,
                    None => row.push((j, u)),
                }
            }
            draws.push(row);
        }
        let mut support: Vec<usize> = (0..d).filter(|&j| k1.matrix()[(x, j)] > 0.0).collect();
        for row in &draws {
            for &(j, _) in row {
                if !support.contains(&j) {
                    support.push(j);
                }
            }
        }
        support.sort_unstable();
        let tests = test_functions(psi1, &support);
        best.test_functions = best.test_functions.max(tests.len());
        let weight = psi2[x].powf(p);
        let mut samples = vec![0.0; budget];
        let mut dense = vec![0.0; d];
        for g in &tests {
            let mean: f64 = g.iter().map(|&(j, v)| k1.matrix()[(x, j)] * v).sum();
            g.iter().for_each(|&(j, v)| dense[j] = v);
            for (s, row) in samples.iter_mut().zip(&draws) {
                let total: f64 = row.iter().map(|&(j, u)| u * dense[j]).sum();
                *s = (total - mean).abs().powf(p);
            }
            g.iter().for_each(|&(j, _)| dense[j] = 0.0);
            let est = MeanEstimate::from_samples(&samples);
            if weight == 0.0 {
                if est.mean > C3_FLOOR {
                    return Err(Error::NotCertifiable(format!(
                        "psi2 vanishes at grid point {x} but the progeny disperses (mean {:.3e})",
                        est.mean
                    )));
                }
                continue;
            }
            let upper = (est.mean + Z_99 * est.stderr) / weight;
            if upper > best_upper {
                best_upper = upper;
                best.mean = est.mean / weight;
                best.stderr = est.stderr / weight;
                best.worst_point = x;
            }
        }
    }
    best.value = best_upper.max(C3_FLOOR);
    Ok(best)
}

/// Assembles the certificate from kernels, spectral data and a dispersion constant.
pub fn certify_md(
    k1: &MeanKernel,
    kp: &MeanKernel,
    sd: &SpectralData,
    psi1: &DVector<f64>,
    psi2: &DVector<f64>,
    n_max: usize,
    c3: f64,
) -> Result<MDCertificate> {
    let p = kp.order();
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("moment order must lie in (1,2], got {p}")));
    }
    if k1.dim() != kp.dim() {
        return Err(Error::Dimension { expected: k1.dim(), got: kp.dim() });
    }
    if !(c3 > 0.0) || !c3.is_finite() {
        return Err(Error::InvalidArgument(format!("dispersion constant must be positive, got {c3}")));
    }
    let c1 = mixing_constant(k1, sd.theta1, sd.beta, psi1, n_max)?;
    let gamma = gamma_witness(kp, sd.theta1, psi2, n_max)?;
    let rate = power_iteration(kp, 1e-12, 100_000)
        .ok()
        .map(|s| (s.theta1 / sd.theta1.powf(p)).powf(1.0 / p));
    let (ratio, anchor) = tail_envelope(&gamma, rate)?;
    let c2 = 1.0;
    Ok(MDCertificate {
        p,
        theta1: sd.theta1,
        beta: sd.beta,
        psi1: psi1.iter().copied().collect(),
        psi2: psi2.iter().copied().collect(),
        c1,
        c2,
        c3,
        c0: (2.0 * c2 * c3).powf(1.0 / p),
        gamma,
        tail_ratio: ratio,
        tail_anchor: anchor,
    })
}

/// Norms of the observable and moments of the initial generation entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `‖f‖_{ψ_1}`.
    pub f_norm: f64,
    /// `‖η_f‖_{ψ_1}`.
    pub eta_f_norm: f64,
    /// `E G_0^{(p)}(ψ_2^p)`.
    pub g0_p_psi2p: f64,
    /// `E (G_0 ψ_1)^p`.
    pub g0_psi1_p: f64,
}

/// Term-by-term value of the L^p bound at `(m, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `c_0 θ^{-1}(c_1‖f‖ + ‖η_f‖) Γ_m (E G_0^{(p)} ψ_2^p)^{1/p}`.
    pub martingale_tail: f64,
    /// `α_n n^β m^β/(n+m)^β c_1`.
    pub mixing: f64,
    /// `‖η_f‖ (1 − n^β/(n+m)^β)`.
    pub renormalisation: f64,
    /// `c_0 θ^{-1} Γ_0 (E G_0^{(p)} ψ_2^p)^{1/p} + (E(G_0ψ_1)^p)^{1/p}`.
    pub initial_scale: f64,
    pub total: f64,
}

/// Evaluates the right-hand side of the L^p convergence bound; `0^β/0^β = 1` when `β = 0`.
pub fn theorem1_rhs(cert: &MDCertificate, sd: &SpectralData, inputs: &BoundInputs, m: usize, n: usize) -> Result<BoundTerms> {
    if cert.beta != sd.beta || cert.theta1 != sd.theta1 {
        return Err(Error::InvalidArgument("certificate and spectral data disagree on theta1 or beta".into()));
    }
    let alpha = if n == 0 {
        return Err(Error::InvalidArgument("bound needs n ≥ 1".into()));
    } else {
        sd.alpha(n).ok_or_else(|| {
            Error::InvalidArgument(format!("alpha_{n} not measured (horizon {})", sd.horizon()))
        })?
    };
    let p = cert.p;
    let beta = cert.beta as i32;
    let (nf, mf) = (n as f64, m as f64);
    let (prod_ratio, ratio) = if beta == 0 {
        (1.0, 1.0)
    } else {
        ((nf * mf / (nf + mf)).powi(beta), (nf / (nf + mf)).powi(beta))
    };
    let g0p = inputs.g0_p_psi2p.powf(1.0 / p);
    let scale = cert.c0 / cert.theta1;
    let martingale_tail = scale * (cert.c1 * inputs.f_norm + inputs.eta_f_norm) * cert.gamma_tail(m) * g0p;
    let mixing = alpha * prod_ratio * cert.c1;
    let renormalisation = inputs.eta_f_norm * (1.0 - ratio);
    let initial_scale = scale * cert.gamma_tail(0) * g0p + inputs.g0_psi1_p.powf(1.0 / p);
    Ok(BoundTerms {
        martingale_tail,
        mixing,
        renormalisation,
        initial_scale,
        total: martingale_tail + (mixing + renormalisation) * initial_scale,
    })
}

/// `sup_x |g(x)| / ψ_1(x)`.
pub fn psi_norm(g: &DVector<f64>, psi1: &DVector<f64>) -> f64 {
    g.iter().zip(psi1.iter()).map(|(a, b)| a.abs() / b).fold(0.0, f64::max)
}
