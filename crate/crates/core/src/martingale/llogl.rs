//! Uniform-integrability criteria: moment conditions for cascades and the
//! truncated-dispersion series of the centred functional `X_k^f`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{power_iteration, GridPoint, MeanKernel};
use crate::population::{advance_generation, Generation, ReproductionLaw};
use crate::stats::{fit_line, MeanEstimate};
use crate::zoo::CascadeLaw;

use super::functions::log_plus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl Verdict {
    /// Both must hold; any failure fails.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fails, _) | (_, Verdict::Fails) => Verdict::Fails,
            (Verdict::Holds, Verdict::Holds) => Verdict::Holds,
            _ => Verdict::Inconclusive,
        }
    }

    /// `value < threshold` judged at `k` standard errors.
    pub fn below(value: f64, stderr: f64, threshold: f64, k: f64) -> Verdict {
        if value + k * stderr < threshold {
            Verdict::Holds
        } else if value - k * stderr >= threshold {
            Verdict::Fails
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// `E (Σu)^p < ∞` and `E Σu^p < 1`.
    PMoment,
    /// `E (Σu) log₊(Σu) < ∞` and `E Σu^p < 1`.
    MassLogMass,
    /// Exponential mixing of `θ^{-n} Q^n f` towards `η_f` with bounded `θ^{-n} Q^n ψ`.
    ExponentialBehaviour,
    /// Summability of the truncated dispersion series of `X_k^f`.
    DispersionSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

impl Quantity {
    pub fn exact(name: &str, value: f64) -> Self {
        Self { name: name.into(), value, stderr: 0.0 }
    }

    pub fn estimated(name: &str, est: MeanEstimate) -> Self {
        Self { name: name.into(), value: est.mean, stderr: est.stderr }
    }
}

/// Trend of the tail terms of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailTrend {
    Converging,
    Diverging,
    Inconclusive,
}

/// Per-`n` terms of both dispersion series and their partial sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub n: usize,
    pub first: f64,
    pub first_stderr: f64,
    pub second: f64,
    pub second_stderr: f64,
    pub first_partial: f64,
    pub second_partial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlogLReport {
    pub condition: Condition,
    pub verdict: Verdict,
    pub inputs: Vec<Quantity>,
    pub numbers: Vec<Quantity>,
    pub series: Vec<SeriesTerm>,
    pub tail_trends: Vec<TailTrend>,
}

impl LlogLReport {
    pub fn number(&self, name: &str) -> Option<&Quantity> {
        self.numbers.iter().find(|q| q.name == name)
    }
}

/// One draw of `X_k^f(x) = G_k^x(f) − (Q^k f)(x)` starting from `δ_x`.
pub fn centered_functional<L, R>(
    law: &L,
    k1: &MeanKernel,
    f: &DVector<f64>,
    x: usize,
    k: usize,
    rng: &mut R,
    particle_cap: usize,
) -> Result<f64>
where
    L: ReproductionLaw,
    L::Type: GridPoint,
    R: Rng + ?Sized,
{
    let grid = *k1.grid();
    if f.len() != k1.dim() {
        return Err(Error::Dimension { expected: k1.dim(), got: f.len() });
    }
    let mut expected = f.clone();
    for _ in 0..k {
        expected = k1.apply(&expected);
    }
    let mut g = Generation::single(L::Type::from_cell(&grid, x));
    for _ in 0..k {
        g = advance_generation(&g, law, rng, particle_cap)?;
    }
    let mut total = crate::stats::CompensatedSum::new();
    for p in &g.particles {
        let j = p.typ.cell(&grid).ok_or_else(|| Error::OffGrid(format!("{:?}", p.typ)))?;
        total.add(p.weight * f[j]);
    }
    Ok(total.value() - expected[x])
}

/// Minimum number of significant tail terms needed to call a trend.
const TREND_POINTS: usize = 5;

fn tail_trend(terms: &[(f64, f64)]) -> TailTrend {
    let window = &terms[terms.len() / 2..];
    if window.iter().all(|&(t, s)| t == 0.0 && s == 0.0) {
        return TailTrend::Converging;
    }
    let significant: Vec<(f64, f64)> = window
        .iter()
        .enumerate()
        .filter(|(_, (t, s))| *t > 0.0 && *t > 4.0 * s)
        .map(|(i, (t, _))| (i as f64, t.ln()))
        .collect();
    if significant.len() < TREND_POINTS {
        return TailTrend::Inconclusive;
    }
    match fit_line(&significant) {
        Ok(fit) if fit.slope <= -0.01 => TailTrend::Converging,
        Ok(fit) if fit.slope >= 0.0 => TailTrend::Diverging,
        _ => TailTrend::Inconclusive,
    }
}

fn trend_verdict(t: TailTrend) -> Verdict {
    match t {
        TailTrend::Converging => Verdict::Holds,
        TailTrend::Diverging => Verdict::Fails,
        TailTrend::Inconclusive => Verdict::Inconclusive,
    }
}

/// Inputs of the dispersion-series check beyond the law and its kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSetup {
    /// Observable `f` on the grid.
    pub f: DVector<f64>,
    /// Generation depth `k` of the centred functional.
    pub k: usize,
    /// Truncation base; defaults to `(θ_1^p/θ_2)^{1/(p−1)}` with `θ_2` the Perron root of `Q^{(p)}`.
    pub rho: Option<f64>,
    pub theta1: f64,
    pub n_max: usize,
    /// Draws of `X_k^f(x)` per grid point.
    pub budget: usize,
    /// `E G_0` as a measure on the grid.
    pub g0: DVector<f64>,
    /// `E G_0^{(p)}` as a measure on the grid.
    pub g0_p: DVector<f64>,
    pub particle_cap: usize,
}

/// Partial sums of `Σ θ^{-n} E(G_0)Q^n g^{(1)}_n` and `Σ θ^{-pn} E(G_0^{(p)})(Q^{(p)})^n g^{(2)}_n`
/// with `g^{(1)}_n = E|X| 1{|X| > ρ^n}` and `g^{(2)}_n = E|X|^p 1{|X| ≤ ρ^n}`, estimated by Monte Carlo.
pub fn hfk_partial_sums<L, R>(law: &L, k1: &MeanKernel, kp: &MeanKernel, setup: &SeriesSetup, rng: &mut R) -> Result<LlogLReport>
where
    L: ReproductionLaw,
    L::Type: GridPoint,
    R: Rng + ?Sized,
{
    let d = k1.dim();
    let p = kp.order();
    if setup.budget < 2 {
        return Err(Error::InvalidArgument("dispersion series needs at least two draws per point".into()));
    }
    for v in [&setup.g0, &setup.g0_p] {
        if v.len() != d {
            return Err(Error::Dimension { expected: d, got: v.len() });
        }
    }
    let theta1 = setup.theta1;
    let rho = match setup.rho {
        Some(r) => r,
        None => {
            let theta2 = power_iteration(kp, 1e-12, 100_000)?.theta1;
            (theta1.powf(p) / theta2).powf(1.0 / (p - 1.0))
        }
    };
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation base must be positive, got {rho}")));
    }

    let draws: Vec<Vec<f64>> = (0..d)
        .map(|x| {
            (0..setup.budget)
                .map(|_| centered_functional(law, k1, &setup.f, x, setup.k, rng, setup.particle_cap).map(f64::abs))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut mu1 = setup.g0.clone();
    let mut mu2 = setup.g0_p.clone();
    let mut series = Vec::with_capacity(setup.n_max);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut buf = vec![0.0; setup.budget];
    for n in 1..=setup.n_max {
        mu1 = k1.apply_left(&mu1) / theta1;
        mu2 = kp.apply_left(&mu2) / theta1.powf(p);
        let cut = rho.powi(n as i32);
        let (mut t1, mut v1, mut t2, mut v2) = (0.0, 0.0, 0.0, 0.0);
        for x in 0..d {
            for (b, a) in buf.iter_mut().zip(&draws[x]) {
                *b = if *a > cut { *a } else { 0.0 };
            }
            let e1 = MeanEstimate::from_samples(&buf);
            for (b, a) in buf.iter_mut().zip(&draws[x]) {
                *b = if *a <= cut { a.powf(p) } else { 0.0 };
            }
            let e2 = MeanEstimate::from_samples(&buf);
            t1 += mu1[x] * e1.mean;
            v1 += (mu1[x] * e1.stderr).powi(2);
            t2 += mu2[x] * e2.mean;
            v2 += (mu2[x] * e2.stderr).powi(2);
        }
        s1 += t1;
        s2 += t2;
        series.push(SeriesTerm {
            n,
            first: t1,
            first_stderr: v1.sqrt(),
            second: t2,
            second_stderr: v2.sqrt(),
            first_partial: s1,
            second_partial: s2,
        });
    }
    let first: Vec<(f64, f64)> = series.iter().map(|t| (t.first, t.first_stderr)).collect();
    let second: Vec<(f64, f64)> = series.iter().map(|t| (t.second, t.second_stderr)).collect();
    let trends = vec![tail_trend(&first), tail_trend(&second)];
    let verdict = trend_verdict(trends[0]).and(trend_verdict(trends[1]));
    let last = series.last().copied();
    Ok(LlogLReport {
        condition: Condition::DispersionSeries,
        verdict,
        inputs: vec![
            Quantity::exact("k", setup.k as f64),
            Quantity::exact("rho", rho),
            Quantity::exact("theta1", theta1),
            Quantity::exact("p", p),
            Quantity::exact("n_max", setup.n_max as f64),
            Quantity::exact("budget", setup.budget as f64),
        ],
        numbers: last
            .map(|t| {
                vec![
                    Quantity::exact("first_partial_sum", t.first_partial),
                    Quantity::exact("second_partial_sum", t.second_partial),
                ]
            })
            .unwrap_or_default(),
        series,
        tail_trends: trends,
    })
}

/// The moment conditions on a single-type cascade, evaluated in closed form.
pub fn liu_conditions(law: &CascadeLaw, p: f64) -> Vec<LlogLReport> {
    let mass_p = law.mass_moment(p);
    let sum_p = law.sum_of_powers(p);
    let mlm = law.mass_log_mass();
    let strict = Verdict::below(sum_p, 0.0, 1.0, 4.0);
    let finite = |v: f64| if v.is_finite() { Verdict::Holds } else { Verdict::Fails };
    let inputs = vec![Quantity::exact("p", p)];
    vec![
        LlogLReport {
            condition: Condition::PMoment,
            verdict: finite(mass_p).and(strict),
            inputs: inputs.clone(),
            numbers: vec![Quantity::exact("mass_moment_p", mass_p), Quantity::exact("sum_of_powers_p", sum_p)],
            series: Vec::new(),
            tail_trends: Vec::new(),
        },
        LlogLReport {
            condition: Condition::MassLogMass,
            verdict: finite(mlm).and(strict),
            inputs,
            numbers: vec![Quantity::exact("mass_log_mass", mlm), Quantity::exact("sum_of_powers_p", sum_p)],
            series: Vec::new(),
            tail_trends: Vec::new(),
        },
    ]
}

/// Monte Carlo version of [`liu_conditions`] for arbitrary single-type laws.
///
/// Finiteness of a moment cannot be decided from samples, so it is taken for
/// granted and only the strict inequality `E Σu^p < 1` drives the verdict.
pub fn liu_conditions_mc<L, R>(law: &L, p: f64, budget: usize, rng: &mut R) -> Result<Vec<LlogLReport>>
where
    L: ReproductionLaw<Type = ()>,
    R: Rng + ?Sized,
{
    if budget < 2 {
        return Err(Error::InvalidArgument("moment estimate needs at least two draws".into()));
    }
    let (mut mp, mut sp, mut ml) = (Vec::with_capacity(budget), Vec::with_capacity(budget), Vec::with_capacity(budget));
    let mut buf = Vec::new();
    for _ in 0..budget {
        buf.clear();
        law.sample_into(&(), rng, &mut buf);
        let mass: f64 = buf.iter().map(|c| c.0).sum();
        mp.push(mass.powf(p));
        sp.push(buf.iter().filter(|c| c.0 > 0.0).map(|c| c.0.powf(p)).sum());
        ml.push(mass * log_plus(mass));
    }
    let (mp, sp, ml) = (MeanEstimate::from_samples(&mp), MeanEstimate::from_samples(&sp), MeanEstimate::from_samples(&ml));
    let strict = Verdict::below(sp.mean, sp.stderr, 1.0, 4.0);
    let inputs = vec![Quantity::exact("p", p), Quantity::exact("budget", budget as f64)];
    Ok(vec![
        LlogLReport {
            condition: Condition::PMoment,
            verdict: strict,
            inputs: inputs.clone(),
            numbers: vec![Quantity::estimated("mass_moment_p", mp), Quantity::estimated("sum_of_powers_p", sp)],
            series: Vec::new(),
            tail_trends: Vec::new(),
        },
        LlogLReport {
            condition: Condition::MassLogMass,
            verdict: strict,
            inputs,
            numbers: vec![Quantity::estimated("mass_log_mass", ml), Quantity::estimated("sum_of_powers_p", sp)],
            series: Vec::new(),
            tail_trends: Vec::new(),
        },
    ])
}

/// Deterministic check of exponential behaviour: `α_n` (against `η_f`, weighted
/// by `ψ`) must decay and `θ^{-n} Q^n ψ / ψ` must stay bounded up to `n_max`.
pub fn eb_check(
    k1: &MeanKernel,
    f: &DVector<f64>,
    psi: &DVector<f64>,
    eta_f: &DVector<f64>,
    theta1: f64,
    n_max: usize,
) -> Result<LlogLReport> {
    let alpha = crate::kernels::alpha_sequence_with_limit(k1, f, eta_f, theta1, 0, psi, n_max)?;
    let c2 = crate::kernels::mixing_constant(k1, theta1, 0, psi, n_max)?;
    let c2_half = crate::kernels::mixing_constant(k1, theta1, 0, psi, n_max / 2)?;
    let last = *alpha.last().unwrap_or(&0.0);
    let first = alpha.first().copied().unwrap_or(0.0);
    let decays = last == 0.0 || last <= 1e-6 * first.max(f64::MIN_POSITIVE);
    let bounded = c2 <= c2_half * (1.0 + 1e-9);
    let verdict = if decays && bounded {
        Verdict::Holds
    } else if last >= first && first > 0.0 {
        Verdict::Fails
    } else {
        Verdict::Inconclusive
    };
    Ok(LlogLReport {
        condition: Condition::ExponentialBehaviour,
        verdict,
        inputs: vec![Quantity::exact("theta1", theta1), Quantity::exact("n_max", n_max as f64)],
        numbers: vec![
            Quantity::exact("alpha_first", first),
            Quantity::exact("alpha_last", last),
            Quantity::exact("c2", c2),
        ],
        series: Vec::new(),
        tail_trends: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_mean_kernel, TypeGrid};
    use crate::population::DEFAULT_PARTICLE_CAP;
    use crate::rng::derive_stream;

    fn one() -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    #[test]
    fn liu_reference_values() {
        let halves = liu_conditions(&CascadeLaw::deterministic(vec![0.5, 0.5]).unwrap(), 2.0);
        assert_eq!(halves[0].verdict, Verdict::Holds);
        assert_eq!(halves[0].number("sum_of_powers_p").unwrap().value, 0.5);
        assert_eq!(halves[0].number("mass_moment_p").unwrap().value, 1.0);
        let split = liu_conditions(&CascadeLaw::uniform_split(), 2.0);
        assert_eq!(split[0].verdict, Verdict::Holds);
        assert_eq!(split[1].verdict, Verdict::Holds);
        let lopsided = liu_conditions(&CascadeLaw::scaled_uniform(2.0).unwrap(), 2.0);
        assert_eq!(lopsided[0].verdict, Verdict::Fails);
        assert_eq!(lopsided[0].number("sum_of_powers_p").unwrap().value, 4.0 / 3.0);
    }

    #[test]
    fn monte_carlo_liu_agrees_with_closed_form() {
        let law = CascadeLaw::scaled_uniform(2.0).unwrap();
        let reps = liu_conditions_mc(&law, 2.0, 50_000, &mut derive_stream(2, 0)).unwrap();
        let sp = reps[0].number("sum_of_powers_p").unwrap();
        assert!((sp.value - 4.0 / 3.0).abs() < 4.0 * sp.stderr);
        assert_eq!(reps[0].verdict, Verdict::Fails);
    }

    #[test]
    fn verdict_thresholds() {
        assert_eq!(Verdict::below(0.5, 0.1, 1.0, 4.0), Verdict::Holds);
        assert_eq!(Verdict::below(0.9, 0.1, 1.0, 4.0), Verdict::Inconclusive);
        assert_eq!(Verdict::below(1.5, 0.1, 1.0, 4.0), Verdict::Fails);
    }

    #[test]
    fn centred_functional_of_two_u() {
        let law = CascadeLaw::scaled_uniform(2.0).unwrap();
        let k1 = build_mean_kernel(&law, &TypeGrid::finite(1), 1.0).unwrap();
        let mut rng = derive_stream(9, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| centered_functional(&law, &k1, &one(), 0, 1, &mut rng, DEFAULT_PARTICLE_CAP).unwrap())
            .collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let var = MeanEstimate::from_samples(&sq);
        assert!((var.mean - 1.0 / 3.0).abs() < 4.0 * var.stderr);
    }

    #[test]
    fn series_vanish_for_conservative_split() {
        let law = CascadeLaw::uniform_split();
        let grid = TypeGrid::finite(1);
        let k1 = build_mean_kernel(&law, &grid, 1.0).unwrap();
        let k2 = build_mean_kernel(&law, &grid, 2.0).unwrap();
        let setup = SeriesSetup {
            f: one(),
            k: 1,
            rho: None,
            theta1: 1.0,
            n_max: 20,
            budget: 500,
            g0: one(),
            g0_p: one(),
            particle_cap: DEFAULT_PARTICLE_CAP,
        };
        let rep = hfk_partial_sums(&law, &k1, &k2, &setup, &mut derive_stream(4, 0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Holds);
        assert!(rep.series.iter().all(|t| t.first_partial == 0.0 && t.second_partial == 0.0));
    }

    #[test]
    fn second_series_diverges_for_two_u() {
        let law = CascadeLaw::scaled_uniform(2.0).unwrap();
        let grid = TypeGrid::finite(1);
        let k1 = build_mean_kernel(&law, &grid, 1.0).unwrap();
        let k2 = build_mean_kernel(&law, &grid, 2.0).unwrap();
        let setup = SeriesSetup {
            f: one(),
            k: 1,
            rho: Some(2.0),
            theta1: 1.0,
            n_max: 20,
            budget: 5_000,
            g0: one(),
            g0_p: one(),
            particle_cap: DEFAULT_PARTICLE_CAP,
        };
        let rep = hfk_partial_sums(&law, &k1, &k2, &setup, &mut derive_stream(4, 1)).unwrap();
        assert!(rep.series.iter().all(|t| t.first == 0.0));
        // second term n equals (4/3)^n Var(2U − 1) = (4/3)^n / 3 up to Monte Carlo error
        let t5 = rep.series[4];
        assert!((t5.second - (4.0f64 / 3.0).powi(5) / 3.0).abs() < 4.0 * t5.second_stderr);
        assert_eq!(rep.tail_trends, vec![TailTrend::Converging, TailTrend::Diverging]);
        assert_eq!(rep.verdict, Verdict::Fails);
    }

    #[test]
    fn eb_holds_for_mixing_chain() {
        let k = MeanKernel::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]], 1.0).unwrap();
        let f = DVector::from_vec(vec![0.0, 1.0]);
        let eta_f = DVector::from_element(2, 3.0 / 7.0);
        let rep = eb_check(&k, &f, &DVector::from_element(2, 1.0), &eta_f, 1.0, 40).unwrap();
        assert_eq!(rep.verdict, Verdict::Holds);
    }
}
