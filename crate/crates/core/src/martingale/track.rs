//! Per-replicate martingale tracks and cross-replicate statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Generation;
use crate::rng::derive_stream;
use crate::stats::{stable_sum, MeanEstimate};

/// Fewest replicates accepted by the cross-replicate tests.
pub const MIN_REPLICATES: usize = 100;

/// Bootstrap resamples used for L^p standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Increments smaller than this multiple of the track scale are treated as
/// rounding noise rather than drift.
pub const INCREMENT_ROUNDING_FLOOR: f64 = 1e-12;

/// `W_n = θ^{-n} G_n(η_f)` along one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrack {
    pub replicate_id: usize,
    pub theta1: f64,
    pub values: Vec<f64>,
}

impl MartingaleTrack {
    pub fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Builds the track from consecutive generations `G_0, G_1, …`.
pub fn biggins_track<'a, T, I, F>(generations: I, eta_f: F, theta1: f64, replicate_id: usize) -> Result<MartingaleTrack>
where
    T: 'a,
    I: IntoIterator<Item = &'a Generation<T>>,
    F: Fn(&T) -> f64,
{
    let values = normalised_observable(generations, eta_f, theta1, 0)?;
    Ok(MartingaleTrack { replicate_id, theta1, values })
}

/// `n^{-β} θ^{-n} G_n(f)` for each supplied generation (`n = 0` is left unscaled by `n^{-β}`).
pub fn normalised_observable<'a, T, I, F>(generations: I, f: F, theta1: f64, beta: u32) -> Result<Vec<f64>>
where
    T: 'a,
    I: IntoIterator<Item = &'a Generation<T>>,
    F: Fn(&T) -> f64,
{
    generations
        .into_iter()
        .map(|g| {
            let n = g.index;
            let poly = if n == 0 { 1.0 } else { (n as f64).powi(-(beta as i32)) };
            Ok(g.integrate(&f)? * poly * theta1.powi(-(n as i32)))
        })
        .collect()
}

fn require_replicates(count: usize) -> Result<()> {
    if count < MIN_REPLICATES {
        Err(Error::TooFewReplicates { got: count, need: MIN_REPLICATES })
    } else {
        Ok(())
    }
}

fn common_horizon(tracks: &[MartingaleTrack]) -> usize {
    tracks.iter().map(|t| t.horizon()).min().unwrap_or(0)
}

/// Replicate means of `W_{n+1} − W_n` with the indices where drift is detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    /// Position `n` holds the estimate for `W_{n+1} − W_n`.
    pub increments: Vec<MeanEstimate>,
    pub flagged: Vec<usize>,
    pub replicates: usize,
}

/// Flags every `n` where `|mean(W_{n+1} − W_n)| > 4·SE` and the mean exceeds
/// the floating-point rounding floor of the track values.
pub fn martingale_increment_test(tracks: &[MartingaleTrack]) -> Result<IncrementReport> {
    require_replicates(tracks.len())?;
    let horizon = common_horizon(tracks);
    let mut increments = Vec::with_capacity(horizon);
    let mut flagged = Vec::new();
    let mut diffs = vec![0.0; tracks.len()];
    for n in 0..horizon {
        for (d, t) in diffs.iter_mut().zip(tracks) {
            *d = t.values[n + 1] - t.values[n];
        }
        let est = MeanEstimate::from_samples(&diffs);
        let scale = stable_sum(tracks.iter().map(|t| t.values[n].abs())) / tracks.len() as f64;
        if est.mean.abs() > 4.0 * est.stderr && est.mean.abs() > INCREMENT_ROUNDING_FLOOR * scale.max(1.0) {
            flagged.push(n);
        }
        increments.push(est);
    }
    Ok(IncrementReport { increments, flagged, replicates: tracks.len() })
}

/// `(E X)^{1/p}` for non-negative samples `X` with a bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpMoment {
    pub estimate: f64,
    pub stderr: f64,
    pub replicates: usize,
}

/// Root of the mean of `samples` (already raised to the power `p`), with a
/// bootstrap standard error from a dedicated seeded stream.
pub fn lp_root_with_bootstrap(samples: &[f64], p: f64, seed: u64) -> LpMoment {
    let n = samples.len();
    let estimate = (stable_sum(samples.iter().copied()) / n as f64).powf(1.0 / p);
    let mut rng = derive_stream(seed, 0);
    let mut stats = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let s = stable_sum((0..n).map(|_| samples[rng.random_range(0..n)]));
        stats.push((s / n as f64).powf(1.0 / p));
    }
    let spread = MeanEstimate::from_samples(&stats);
    LpMoment { estimate, stderr: spread.variance().sqrt(), replicates: n }
}

/// Monte Carlo estimate of the L^p distance between the normalised observable
/// at `m + n` and the horizon proxy `W_N` of the limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpErrorReport {
    pub p: f64,
    pub m: usize,
    pub n: usize,
    pub proxy_horizon: usize,
    pub lhs_estimate: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub rhs_bound: Option<f64>,
    /// Bias bound `c_0 θ^{-1} ‖η_f‖ Γ_N` of replacing `W_∞` by `W_N`.
    pub proxy_gap_bound: Option<f64>,
}

impl LpErrorReport {
    pub fn with_bound(mut self, rhs: f64, proxy_gap: f64) -> Self {
        self.rhs_bound = Some(rhs);
        self.proxy_gap_bound = Some(proxy_gap);
        self
    }

    /// `lhs − k·SE ≤ rhs`; `None` when no bound was attached.
    pub fn within_bound(&self, k: f64) -> Option<bool> {
        self.rhs_bound.map(|rhs| self.lhs_estimate - k * self.stderr <= rhs)
    }
}

/// `(mean_i |v_i[m+n] − W_i[N]|^p)^{1/p}` over replicates, where `v_i` is the
/// normalised observable of replicate `i` and `W_i[N]` its track at the proxy horizon.
pub fn lp_error(
    tracks: &[MartingaleTrack],
    evaluations: &[Vec<f64>],
    p: f64,
    m: usize,
    n: usize,
    proxy_horizon: usize,
    bootstrap_seed: u64,
) -> Result<LpErrorReport> {
    require_replicates(tracks.len())?;
    if evaluations.len() != tracks.len() {
        return Err(Error::Dimension { expected: tracks.len(), got: evaluations.len() });
    }
    if m + n > proxy_horizon {
        return Err(Error::InvalidArgument(format!("m + n = {} exceeds the proxy horizon {proxy_horizon}", m + n)));
    }
    if common_horizon(tracks) < proxy_horizon || evaluations.iter().any(|v| v.len() <= m + n) {
        return Err(Error::InvalidArgument("tracks are shorter than the requested horizons".into()));
    }
    let samples: Vec<f64> = tracks
        .iter()
        .zip(evaluations)
        .map(|(t, v)| (v[m + n] - t.values[proxy_horizon]).abs().powf(p))
        .collect();
    let lp = lp_root_with_bootstrap(&samples, p, bootstrap_seed);
    Ok(LpErrorReport {
        p,
        m,
        n,
        proxy_horizon,
        lhs_estimate: lp.estimate,
        stderr: lp.stderr,
        replicates: lp.replicates,
        rhs_bound: None,
        proxy_gap_bound: None,
    })
}

/// `(E|W_{m+n} − W_m|^p)^{1/p}` across replicates.
pub fn cauchy_distance(tracks: &[MartingaleTrack], p: f64, m: usize, n: usize, bootstrap_seed: u64) -> Result<LpMoment> {
    require_replicates(tracks.len())?;
    if common_horizon(tracks) < m + n {
        return Err(Error::InvalidArgument("tracks are shorter than m + n".into()));
    }
    let samples: Vec<f64> = tracks.iter().map(|t| (t.values[m + n] - t.values[m]).abs().powf(p)).collect();
    Ok(lp_root_with_bootstrap(&samples, p, bootstrap_seed))
}

/// Fraction of replicates with `W_n < ε`.
pub fn degeneracy_probe(tracks: &[MartingaleTrack], epsilon: f64, n: usize) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::TooFewReplicates { got: 0, need: 1 });
    }
    if common_horizon(tracks) < n {
        return Err(Error::InvalidArgument(format!("tracks end before generation {n}")));
    }
    let below = tracks.iter().filter(|t| t.values[n] < epsilon).count();
    Ok(below as f64 / tracks.len() as f64)
}
