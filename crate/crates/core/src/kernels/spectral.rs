//! Perron data of non-negative kernels: power iteration, polynomial growth
//! exponent, and the convergence profile `α_n` of the renormalised semigroup.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mean::{for_each_power, MeanKernel};
use crate::error::{Error, Result};
use crate::stats::{least_squares, stable_sum};

/// Dominant eigen-elements of a kernel together with the measured `α_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub theta1: f64,
    pub beta: u32,
    /// Right eigenvector, sup-norm 1.
    pub eta: Vec<f64>,
    /// Left eigenvector, total mass 1.
    pub nu: Vec<f64>,
    /// `α_1, …, α_{N_max}` (position `n−1` holds `α_n`); empty until measured.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub right_residual: f64,
    pub left_residual: f64,
}

impl SpectralData {
    pub fn eta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.eta)
    }

    pub fn nu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.nu)
    }

    /// `α_n` for `n ≥ 1`.
    pub fn alpha(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.alpha.get(i).copied())
    }

    pub fn horizon(&self) -> usize {
        self.alpha.len()
    }

    /// Rank-one limit `η_f = η ν(f) / ν(η)` of `θ_1^{-n} Q^n f`.
    pub fn eta_f(&self, f: &DVector<f64>) -> DVector<f64> {
        let nu = self.nu_vector();
        let eta = self.eta_vector();
        let scale = nu.dot(f) / nu.dot(&eta);
        eta * scale
    }

    /// Suffix maxima `sup_{k ≥ n} α_k`, a non-increasing envelope of `α`.
    pub fn alpha_envelope(&self) -> Vec<f64> {
        let mut env = self.alpha.clone();
        for i in (0..env.len().saturating_sub(1)).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        env
    }

    /// First `n` from which `α` itself is non-increasing.
    pub fn alpha_burn_in(&self) -> usize {
        let mut start = self.alpha.len();
        while start > 1 && self.alpha[start - 2] >= self.alpha[start - 1] {
            start -= 1;
        }
        start.max(1)
    }
}

/// Period of the strongly connected components of the support graph of `m`.
/// Returns the largest period found among components carrying a cycle.
fn max_component_period(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| m[(i, j)] > 0.0).collect()).collect();
    let comp = tarjan_components(&adj);
    let mut worst = 1;
    let mut level = vec![usize::MAX; n];
    for c in 0..comp.iter().copied().max().map_or(0, |c| c + 1) {
        let members: Vec<usize> = (0..n).filter(|&v| comp[v] == c).collect();
        let start = members[0];
        level[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut g = 0usize;
        let mut has_cycle = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if comp[v] != c {
                    continue;
                }
                has_cycle = true;
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                } else {
                    let d = (level[u] + 1).abs_diff(level[v]);
                    g = gcd(g, d);
                }
            }
        }
        if has_cycle && g > worst {
            worst = g;
        }
    }
    worst
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn tarjan_components(adj: &[Vec<usize>]) -> Vec<usize> {
    // iterative Tarjan
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if *edge < adj[v].len() {
                let w = adj[v][*edge];
                *edge += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

/// Perron root and eigenvectors by simultaneous right/left power iteration
/// from uniform starting vectors.
///
/// Kernels whose support graph has a periodic component are rejected up
/// front; otherwise the iteration stops once both residuals
/// `‖Qη − θη‖_∞` and `‖νQ − θν‖_1` are at most `tol`.
pub fn power_iteration(k: &MeanKernel, tol: f64, max_iter: usize) -> Result<SpectralData> {
    if k.is_zero() {
        return Err(Error::ZeroKernel);
    }
    let period = max_component_period(k.matrix());
    if period > 1 {
        return Err(Error::NotPrimitive(format!("support graph has a component of period {period}")));
    }
    let n = k.dim();
    let mut eta = DVector::from_element(n, 1.0);
    let mut nu = DVector::from_element(n, 1.0 / n as f64);
    let mut right_res = f64::INFINITY;
    let mut left_res = f64::INFINITY;
    for it in 1..=max_iter {
        let q_eta = k.apply(&eta);
        let theta = q_eta.amax();
        if theta == 0.0 {
            return Err(Error::NotPrimitive("iterate collapsed to zero (nilpotent support)".into()));
        }
        let nu_q = k.apply_left(&nu);
        right_res = (&q_eta - &eta * theta).amax();
        left_res = (&nu_q - &nu * theta).lp_norm(1);
        if right_res <= tol && left_res <= tol {
            return Ok(SpectralData {
                theta1: theta,
                beta: 0,
                eta: eta.iter().copied().collect(),
                nu: nu.iter().copied().collect(),
                alpha: Vec::new(),
                iterations: it,
                right_residual: right_res,
                left_residual: left_res,
            });
        }
        eta = q_eta / theta;
        let mass = nu_q.sum();
        if mass == 0.0 {
            return Err(Error::NotPrimitive("left iterate collapsed to zero".into()));
        }
        nu = nu_q / mass;
    }
    Err(Error::NotPrimitive(format!(
        "no convergence after {max_iter} iterations (residuals {right_res:.3e}, {left_res:.3e})"
    )))
}

/// Outcome of the polynomial-growth regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub theta1: f64,
    pub beta: u32,
    /// Exponent before rounding.
    pub beta_raw: f64,
    /// Root-mean-square residual of the unrounded fit (log scale).
    pub residual: f64,
}

/// Fits `log ‖Q^n f‖_∞ ≈ n log θ_1 + β log n + c` over `window`, rounds β to
/// the nearest non-negative integer, then refits `n log θ_1 + c + d/n` with
/// β held fixed to remove the leading finite-`n` correction of polynomial
/// prefactors.
pub fn estimate_beta(k: &MeanKernel, f: &DVector<f64>, window: RangeInclusive<usize>) -> Result<BetaFit> {
    let (lo, hi) = (*window.start(), *window.end());
    if lo == 0 || hi < lo + 8 {
        return Err(Error::InvalidArgument(format!(
            "beta window must start at n ≥ 1 and span at least 8 steps, got {lo}..={hi}"
        )));
    }
    let mut logs = Vec::with_capacity(hi - lo + 1);
    for_each_power(k, f, hi, |n, sv| {
        if n >= lo {
            logs.push((n as f64, sv.log_sup_norm()));
        }
    });
    if logs.iter().any(|(_, l)| !l.is_finite()) {
        return Err(Error::InvalidArgument("Q^n f vanishes inside the window".into()));
    }
    let rows = logs.len();
    let y = DVector::from_iterator(rows, logs.iter().map(|p| p.1));

    let design = DMatrix::from_fn(rows, 3, |i, j| {
        let n = logs[i].0;
        match j {
            0 => n - lo as f64,
            1 => n.ln(),
            _ => 1.0,
        }
    });
    let coef = least_squares(&design, &y)?;
    let fitted = &design * &coef;
    let residual = ((&y - fitted).norm_squared() / rows as f64).sqrt();
    let beta_raw = coef[1];
    let rounded = beta_raw.round().max(0.0);
    if (beta_raw - rounded).abs() > 0.25 {
        return Err(Error::BetaNotInteger { raw: beta_raw });
    }
    let beta = rounded as u32;

    let y_fixed = DVector::from_iterator(rows, logs.iter().map(|&(n, l)| l - beta as f64 * n.ln()));
    let design2 = DMatrix::from_fn(rows, 3, |i, j| {
        let n = logs[i].0;
        match j {
            0 => n - lo as f64,
            1 => 1.0,
            _ => lo as f64 / n,
        }
    });
    let coef2 = least_squares(&design2, &y_fixed)?;
    Ok(BetaFit { theta1: coef2[0].exp(), beta, beta_raw, residual })
}

/// `α_n = max_x |n^{-β} θ_1^{-n} (Q^n f)(x) − η_f(x)| / ψ_1(x)` for `n = 1..=n_max`
/// with an explicit limit profile `η_f`.
pub fn alpha_sequence_with_limit(
    k: &MeanKernel,
    f: &DVector<f64>,
    eta_f: &DVector<f64>,
    theta1: f64,
    beta: u32,
    psi1: &DVector<f64>,
    n_max: usize,
) -> Result<Vec<f64>> {
    let n = k.dim();
    for v in [f, eta_f, psi1] {
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
    }
    if psi1.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("psi1 must be strictly positive".into()));
    }
    let mut out = Vec::with_capacity(n_max);
    let mut v = f.clone();
    for step in 1..=n_max {
        v = k.apply(&v) / theta1;
        let poly = (step as f64).powi(-(beta as i32));
        let a = (0..n)
            .map(|x| (poly * v[x] - eta_f[x]).abs() / psi1[x])
            .fold(0.0, f64::max);
        out.push(a);
    }
    Ok(out)
}

/// `α_n` against the rank-one limit `η_f = η ν(f)/ν(η)` of `sd`.
pub fn alpha_sequence(
    k: &MeanKernel,
    f: &DVector<f64>,
    sd: &SpectralData,
    psi1: &DVector<f64>,
    n_max: usize,
) -> Result<Vec<f64>> {
    let eta_f = sd.eta_f(f);
    alpha_sequence_with_limit(k, f, &eta_f, sd.theta1, sd.beta, psi1, n_max)
}

/// Both eigen-relation residuals of `sd` against `k`, recomputed from scratch.
pub fn eigen_residuals(k: &MeanKernel, sd: &SpectralData) -> (f64, f64) {
    let eta = sd.eta_vector();
    let nu = sd.nu_vector();
    let right = (k.apply(&eta) - &eta * sd.theta1).amax() / eta.amax();
    let left = stable_sum((k.apply_left(&nu) - &nu * sd.theta1).iter().map(|v| v.abs()));
    (right, left)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(rows: &[&[f64]]) -> MeanKernel {
        MeanKernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 1.0).unwrap()
    }

    #[test]
    fn scalar_identity_multiple() {
        let sd = power_iteration(&kernel(&[&[3.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 0.0, 3.0]]), 1e-12, 100).unwrap();
        assert_eq!(sd.theta1, 3.0);
        assert_eq!(sd.eta, vec![1.0; 3]);
        assert_eq!(sd.nu, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn periodic_flip_is_rejected() {
        let err = power_iteration(&kernel(&[&[0.0, 1.0], &[1.0, 0.0]]), 1e-12, 1000).unwrap_err();
        assert!(matches!(err, Error::NotPrimitive(_)));
        assert!(err.to_string().contains("non-primitive or slowly mixing"));
    }

    #[test]
    fn zero_kernel_is_rejected() {
        assert_eq!(power_iteration(&kernel(&[&[0.0, 0.0], &[0.0, 0.0]]), 1e-12, 10), Err(Error::ZeroKernel));
    }

    #[test]
    fn all_ones_two_by_two() {
        // exact eigendecomposition: θ = 2, η = (1,1), ν = (1/2,1/2)
        let sd = power_iteration(&kernel(&[&[1.0, 1.0], &[1.0, 1.0]]), 1e-12, 100).unwrap();
        assert_eq!(sd.theta1, 2.0);
        assert_eq!(sd.eta, vec![1.0, 1.0]);
        assert_eq!(sd.nu, vec![0.5, 0.5]);
    }

    #[test]
    fn slow_mixing_reports_non_convergence() {
        let k = kernel(&[&[1.0, 1e-9], &[1e-6, 1.0]]);
        let err = power_iteration(&k, 1e-14, 50).unwrap_err();
        assert!(matches!(err, Error::NotPrimitive(_)));
    }

    #[test]
    fn period_of_three_cycle_with_chord() {
        // cycles of length 3 and 2 give period gcd(3,2) = 1
        let k = kernel(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(max_component_period(k.matrix()), 1);
        let k = kernel(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(max_component_period(k.matrix()), 3);
    }

    #[test]
    fn beta_of_scaled_identity() {
        let fit = estimate_beta(&kernel(&[&[2.0, 0.0], &[0.0, 2.0]]), &DVector::from_element(2, 1.0), 10..=40).unwrap();
        assert_eq!(fit.beta, 0);
        assert!((fit.theta1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn beta_of_jordan_block() {
        // Q^n f = (2^n + n 2^{n-1}, 2^n)
        let fit = estimate_beta(&kernel(&[&[2.0, 1.0], &[0.0, 2.0]]), &DVector::from_element(2, 1.0), 500..=1000).unwrap();
        assert_eq!(fit.beta, 1);
        assert!((fit.theta1 - 2.0).abs() < 1e-6, "theta {}", fit.theta1);
    }

    #[test]
    fn beta_of_all_ones() {
        let fit = estimate_beta(&kernel(&[&[1.0, 1.0], &[1.0, 1.0]]), &DVector::from_element(2, 1.0), 10..=40).unwrap();
        assert_eq!(fit.beta, 0);
        assert!((fit.theta1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn beta_window_too_short() {
        assert!(estimate_beta(&kernel(&[&[1.0]]), &DVector::from_element(1, 1.0), 3..=9).is_err());
    }

    #[test]
    fn alpha_vanishes_on_eigenfunction() {
        let k = kernel(&[&[0.5, 0.5], &[0.2, 0.8]]);
        let sd = power_iteration(&k, 1e-14, 10_000).unwrap();
        let eta_f = sd.eta_vector();
        let a = alpha_sequence_with_limit(&k, &eta_f, &eta_f, sd.theta1, 0, &DVector::from_element(2, 1.0), 20).unwrap();
        assert!(a.iter().all(|v| *v < 1e-13));
    }

    #[test]
    fn alpha_of_all_ones_indicator() {
        // Q^n (1,0) = 2^{n-1}(1,1); η ν(f) = (1/2, 1/2): exact zero from n = 1.
        let k = kernel(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let sd = power_iteration(&k, 1e-12, 100).unwrap();
        let a = alpha_sequence(&k, &DVector::from_vec(vec![1.0, 0.0]), &sd, &DVector::from_element(2, 1.0), 10).unwrap();
        assert_eq!(a, vec![0.0; 10]);
    }

    #[test]
    fn envelope_is_non_increasing() {
        let sd = SpectralData {
            theta1: 1.0,
            beta: 0,
            eta: vec![1.0],
            nu: vec![1.0],
            alpha: vec![0.1, 0.3, 0.2, 0.25, 0.05, 0.01],
            iterations: 0,
            right_residual: 0.0,
            left_residual: 0.0,
        };
        assert_eq!(sd.alpha_envelope(), vec![0.3, 0.3, 0.25, 0.25, 0.05, 0.01]);
        assert_eq!(sd.alpha_burn_in(), 4);
    }
}
