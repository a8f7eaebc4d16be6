//! Replicate execution and the analysis pipelines.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelConfig, Pipeline};
use super::output::{Check, ReplicateSummary, RunResult, Series};
use crate::error::{Error, Result};
use crate::kernels::{
    alpha_sequence, build_mean_kernel, certify_md, eigen_residuals, estimate_beta, estimate_c3, power_iteration,
    psi_norm, theorem1_rhs, BoundInputs, GridPoint, MDCertificate, MeanKernel, SpectralData, TypeGrid,
};
use crate::martingale::{
    degeneracy_probe, eb_check, hfk_partial_sums, liu_conditions, liu_conditions_mc, lp_error,
    martingale_increment_test, normalised_observable, MartingaleTrack, SeriesSetup, Verdict,
};
use crate::population::{
    simulate, FiniteLaw, Generation, Individual, MomentMeasure, ReproductionLaw, SimOptions, StorageMode,
};
use crate::rng::{derive_seed, derive_stream, Stream};
use crate::stats::MeanEstimate;
use crate::zoo::{
    ifs_convergence_probe, kernel_product_observable, lineage_average_observable, CascadeLaw, EnrichedLaw, IfsLaw,
    KernelProductLaw, ProbeOptions,
};

/// Standard errors at which Monte Carlo agreement is judged.
const AGREEMENT_SIGMAS: f64 = 4.0;
/// Relative slack for values that should agree up to rounding.
const ROUNDING_SLACK: f64 = 1e-12;
/// Threshold used by the cascade degeneracy series.
const DEGENERACY_EPSILON: f64 = 1e-3;
const RESIDUAL_TOL: f64 = 1e-8;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;
/// Powers of the kernel used to fit the polynomial growth exponent; far out so
/// that lower-order polynomial corrections have died down.
const BETA_WINDOW: std::ops::RangeInclusive<usize> = 500..=1000;

/// Builds the law named by `config.model` and binds a [`GridCtx`] to `$ctx`.
macro_rules! on_grid_model {
    ($config:expr, $pipeline:expr, $ctx:ident => $body:expr) => {{
        let config: &ExperimentConfig = $config;
        match &config.model {
            ModelConfig::Finite { outcomes, start, f } => {
                let law = FiniteLaw::new(outcomes.clone()).map_err(config_err)?;
                let fv = DVector::from_column_slice(f);
                let fc = fv.clone();
                let $ctx = GridCtx {
                    law: &law,
                    grid: TypeGrid::finite(law.n_types()),
                    start: *start,
                    start_cell: *start,
                    fv,
                    fx: Box::new(move |x: &usize| fc[*x]),
                    exact: true,
                    ergodic_chain: false,
                };
                $body
            }
            ModelConfig::MarkovChain { transition, start, f } => {
                let law = FiniteLaw::markov_chain(transition).map_err(config_err)?;
                let fv = DVector::from_column_slice(f);
                let fc = fv.clone();
                let $ctx = GridCtx {
                    law: &law,
                    grid: TypeGrid::finite(law.n_types()),
                    start: *start,
                    start_cell: *start,
                    fv,
                    fx: Box::new(move |x: &usize| fc[*x]),
                    exact: true,
                    ergodic_chain: true,
                };
                $body
            }
            ModelConfig::Cascade { spec } => {
                let law = CascadeLaw::new(spec.clone(), false).map_err(config_err)?;
                let $ctx = GridCtx {
                    law: &law,
                    grid: TypeGrid::finite(1),
                    start: (),
                    start_cell: 0,
                    fv: ones(1),
                    fx: Box::new(|_: &()| 1.0),
                    exact: true,
                    ergodic_chain: false,
                };
                $body
            }
            ModelConfig::Ifs { maps, probs, weights, start } => {
                let law = IfsLaw::new(maps.clone(), probs.clone(), weights.clone()).map_err(config_err)?;
                let grid = TypeGrid::unit_dyadic(config.grid.exponent);
                let start_cell = start.cell(&grid).ok_or_else(|| Error::Config(format!("start {start} off grid")))?;
                let $ctx = GridCtx {
                    law: &law,
                    fv: DVector::from_vec(grid.points()),
                    grid,
                    start: *start,
                    start_cell,
                    fx: Box::new(|x: &f64| *x),
                    exact: false,
                    ergodic_chain: false,
                };
                $body
            }
            other => Err(unsupported($pipeline, other)),
        }
    }};
}

/// Runs `f(i, stream_i)` for `i = 0..count` on the current rayon pool.
///
/// Replicate `i` always receives `derive_stream(seed, i)` and results come
/// back in index order, so the output does not depend on the thread count.
pub fn run_replicates<T, F>(seed: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> T + Sync,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, i as u64);
            f(i, &mut rng)
        })
        .collect()
}

/// Runs `job` on a dedicated pool of `threads` workers (the global pool when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Executes the configured pipeline.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let pipeline = config.resolved_pipeline();
    let mut res = RunResult::new(pipeline, config.clone());
    match pipeline {
        Pipeline::Simulate => match &config.model {
            ModelConfig::KernelProducts { .. } => kernel_products(config, &mut res)?,
            _ => on_grid_model!(config, pipeline, ctx => simulate_grid(&ctx, config, &mut res))?,
        },
        Pipeline::Spectral => match &config.model {
            ModelConfig::KernelProducts { .. } => {
                let (law, _, f) = kernel_law(config)?;
                let k1 = law.mean_kernel()?;
                spectral_part(&k1, &f, &ones(f.len()), config.horizons.n_max, &mut res)?;
            }
            _ => on_grid_model!(config, pipeline, ctx => {
                let psi1 = ctx.psi(&config.certify.psi1, "psi1")?;
                let k1 = build_mean_kernel(ctx.law, &ctx.grid, 1.0)?;
                spectral_part(&k1, &ctx.fv, &psi1, config.horizons.n_max, &mut res).map(|_| ())
            })?,
        },
        Pipeline::Certify => on_grid_model!(config, pipeline, ctx => certify_part(&ctx, config, &mut res).map(|_| ()))?,
        Pipeline::VerifyTheorem1 => on_grid_model!(config, pipeline, ctx => verify_theorem1(&ctx, config, &mut res))?,
        Pipeline::Llogl => on_grid_model!(config, pipeline, ctx => llogl(&ctx, config, &mut res))?,
        Pipeline::Cascade => cascade(config, &mut res)?,
        Pipeline::KernelProducts => kernel_products(config, &mut res)?,
        Pipeline::Ifs => ifs(config, &mut res)?,
        Pipeline::Lineage => on_grid_model!(config, pipeline, ctx => lineage(&ctx, config, &mut res))?,
    }
    Ok(res)
}

fn unsupported(pipeline: Pipeline, model: &ModelConfig) -> Error {
    Error::Config(format!("pipeline {} does not support {} models", pipeline.name(), model.kind()))
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn ones(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0)
}

/// A model whose types map onto a finite grid, with its observable.
struct GridCtx<'a, L: ReproductionLaw> {
    law: &'a L,
    grid: TypeGrid,
    start: L::Type,
    start_cell: usize,
    /// Observable on the grid.
    fv: DVector<f64>,
    /// Observable on types.
    fx: Box<dyn Fn(&L::Type) -> f64 + Sync + 'a>,
    /// The grid kernel is the exact mean kernel (no discretisation).
    exact: bool,
    /// Single-child stochastic model whose stationary law is the lineage target.
    ergodic_chain: bool,
}

impl<L> GridCtx<'_, L>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    fn psi(&self, given: &Option<Vec<f64>>, name: &str) -> Result<DVector<f64>> {
        match given {
            None => Ok(ones(self.grid.len())),
            Some(v) if v.len() == self.grid.len() => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::Config(format!("{name} has {} entries, grid has {}", v.len(), self.grid.len()))),
        }
    }

    fn g0(&self) -> Generation<L::Type> {
        Generation::single(self.start.clone())
    }

    /// Lifts a grid vector to a function on types.
    fn on_types<'v>(&self, v: &'v DVector<f64>) -> impl Fn(&L::Type) -> f64 + Sync + 'v
    where
        L::Type: 'v,
    {
        let grid = self.grid;
        move |t: &L::Type| t.cell(&grid).map_or(f64::NAN, |c| v[c])
    }
}


/// Observables recorded on every generation of one replicate.
struct Sampled {
    values: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

fn observe_run<L, R, O>(law: &L, g0: Generation<L::Type>, horizon: usize, rng: &mut R, cap: usize, obs: &O) -> Result<Sampled>
where
    L: ReproductionLaw,
    R: Rng + ?Sized,
    O: Fn(&Generation<L::Type>) -> Result<Vec<f64>>,
{
    let mut values = Vec::with_capacity(horizon + 1);
    let mut err = None;
    let options = SimOptions { mode: StorageMode::GenerationOnly, particle_cap: cap };
    let traj = simulate(law, g0, horizon, rng, options, |g| {
        if err.is_none() {
            match obs(g) {
                Ok(v) => values.push(v),
                Err(e) => err = Some(e),
            }
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(Sampled { values, sizes: traj.sizes().to_vec() }),
    }
}

/// Runs the replicates, separating capped ones (recorded, not aggregated) from completed ones.
fn gather<T, F>(config: &ExperimentConfig, per: F) -> Result<(Vec<ReplicateSummary>, Vec<T>)>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> Result<(T, Vec<usize>)> + Sync,
{
    let outcomes = run_replicates(config.seed, config.replicates, per);
    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut values = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((v, sizes)) => {
                summaries.push(ReplicateSummary { replicate: i, total_particles: sizes.iter().sum(), sizes, capped: false });
                values.push(v);
            }
            Err(Error::PopulationCap { .. }) => {
                summaries.push(ReplicateSummary { replicate: i, sizes: Vec::new(), total_particles: 0, capped: true });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((summaries, values))
}

fn particle_cap<T>(config: &ExperimentConfig) -> usize {
    config.caps.particle_cap(std::mem::size_of::<Individual<T>>())
}

/// Per-`n` means of observable `k` across replicates.
fn column_means(values: &[Sampled], k: usize) -> Vec<MeanEstimate> {
    let horizon = values.iter().map(|s| s.values.len()).min().unwrap_or(0);
    (0..horizon)
        .map(|n| MeanEstimate::from_samples(&values.iter().map(|s| s.values[n][k]).collect::<Vec<_>>()))
        .collect()
}

fn agreement(est: &MeanEstimate, target: f64) -> Verdict {
    if est.count == 0 {
        Verdict::Inconclusive
    } else if (est.mean - target).abs() <= AGREEMENT_SIGMAS * est.stderr + ROUNDING_SLACK * target.abs().max(1.0) {
        Verdict::Holds
    } else {
        Verdict::Fails
    }
}

fn holds_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Holds
    } else {
        Verdict::Fails
    }
}

/// `(Q^n f)(x)` for `n = 0..=horizon`.
fn kernel_orbit(k: &MeanKernel, f: &DVector<f64>, x: usize, horizon: usize) -> Vec<f64> {
    let mut v = f.clone();
    let mut out = vec![v[x]];
    for _ in 0..horizon {
        v = k.apply(&v);
        out.push(v[x]);
    }
    out
}

fn simulate_grid<L>(ctx: &GridCtx<L>, config: &ExperimentConfig, res: &mut RunResult) -> Result<()>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    let horizon = config.horizons.n_max;
    let cap = particle_cap::<L::Type>(config);
    let obs = |g: &Generation<L::Type>| Ok(vec![g.integrate(&ctx.fx)?, g.total_mass()]);
    let (summaries, values) = gather(config, |_, rng| {
        let s = observe_run(ctx.law, ctx.g0(), horizon, rng, cap, &obs)?;
        let sizes = s.sizes.clone();
        Ok((s, sizes))
    })?;
    res.set_replicates(summaries);
    let targets = if ctx.exact {
        let k1 = build_mean_kernel(ctx.law, &ctx.grid, 1.0)?;
        Some((kernel_orbit(&k1, &ctx.fv, ctx.start_cell, horizon), kernel_orbit(&k1, &ones(ctx.grid.len()), ctx.start_cell, horizon)))
    } else {
        None
    };
    for (k, name) in [(0, "mean_f"), (1, "mean_mass")] {
        let means = column_means(&values, k);
        let mut series = Series::new(name);
        for (n, est) in means.iter().enumerate() {
            let target = targets.as_ref().map(|t| if k == 0 { t.0[n] } else { t.1[n] });
            series.push(n, est.mean, est.stderr, target);
            if let Some(t) = target {
                res.check(
                    Check::new(format!("many_to_one_{name}_{n}"), agreement(est, t), est.mean)
                        .target(t)
                        .stderr(est.stderr),
                );
            }
        }
        res.series.push(series);
    }
    Ok(())
}

/// Perron data, β fit and `α_n` up to `horizon`; `None` when the power iteration fails.
fn spectral_part(
    k1: &MeanKernel,
    f: &DVector<f64>,
    psi1: &DVector<f64>,
    horizon: usize,
    res: &mut RunResult,
) -> Result<Option<SpectralData>> {
    let beta = estimate_beta(k1, f, BETA_WINDOW);
    match &beta {
        Ok(b) => {
            res.reports.beta = Some(*b);
            res.check(Check::new("beta", Verdict::Holds, b.beta as f64).detail(format!("raw {:.6}", b.beta_raw)));
        }
        Err(e) => res.check(Check::new("beta", Verdict::Inconclusive, f64::NAN).detail(e.to_string())),
    }
    let mut sd = match power_iteration(k1, POWER_TOL, POWER_MAX_ITER) {
        Ok(sd) => sd,
        Err(e) => {
            res.check(Check::new("perron", Verdict::Inconclusive, f64::NAN).detail(e.to_string()));
            return Ok(None);
        }
    };
    if let Ok(b) = beta {
        sd.beta = b.beta;
    }
    sd.alpha = alpha_sequence(k1, f, &sd, psi1, horizon)?;
    let (right, left) = eigen_residuals(k1, &sd);
    res.check(Check::new("perron_right_residual", holds_if(right <= RESIDUAL_TOL), right).target(RESIDUAL_TOL));
    res.check(Check::new("perron_left_residual", holds_if(left <= RESIDUAL_TOL), left).target(RESIDUAL_TOL));
    let mut series = Series::new("alpha");
    for (i, a) in sd.alpha.iter().enumerate() {
        series.push(i + 1, *a, 0.0, None);
    }
    res.series.push(series);
    res.reports.spectral = Some(sd.clone());
    Ok(Some(sd))
}

struct Certified {
    sd: SpectralData,
    cert: MDCertificate,
    inputs: BoundInputs,
}

fn certify_part<L>(ctx: &GridCtx<L>, config: &ExperimentConfig, res: &mut RunResult) -> Result<Option<Certified>>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    let psi1 = ctx.psi(&config.certify.psi1, "psi1")?;
    let psi2 = ctx.psi(&config.certify.psi2, "psi2")?;
    let k1 = build_mean_kernel(ctx.law, &ctx.grid, 1.0)?;
    let Some(sd) = spectral_part(&k1, &ctx.fv, &psi1, config.horizons.proxy, res)? else {
        return Ok(None);
    };
    let kp = build_mean_kernel(ctx.law, &ctx.grid, config.p)?;
    let budget = config.certify.budget.unwrap_or(config.replicates).max(2);
    let mut rng = derive_stream(derive_seed(config.seed, "dispersion"), 0);
    let c3 = match estimate_c3(ctx.law, &k1, &psi1, &psi2, config.p, budget, &mut rng) {
        Ok(c3) => c3,
        Err(e @ Error::NotCertifiable(_)) => {
            res.check(Check::new("certificate", Verdict::Inconclusive, f64::NAN).detail(e.to_string()));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    res.reports.dispersion = Some(c3.clone());
    let cert = match certify_md(&k1, &kp, &sd, &psi1, &psi2, config.horizons.proxy, c3.value) {
        Ok(c) => c,
        Err(e @ (Error::NotSummable { .. } | Error::NotCertifiable(_))) => {
            res.check(Check::new("certificate", Verdict::Inconclusive, f64::NAN).detail(e.to_string()));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    res.check(Check::new("certificate", Verdict::Holds, cert.c0).detail("c0"));
    let mut gamma = Series::new("gamma");
    for (n, g) in cert.gamma.iter().enumerate() {
        gamma.push(n, *g, 0.0, None);
    }
    res.series.push(gamma);

    let eta_f = sd.eta_f(&ctx.fv);
    let s = ctx.start_cell;
    let inputs = BoundInputs {
        f_norm: psi_norm(&ctx.fv, &psi1),
        eta_f_norm: psi_norm(&eta_f, &psi1),
        g0_p_psi2p: psi2[s].powf(config.p),
        g0_psi1_p: psi1[s].powf(config.p),
    };
    let mut rhs = Series::new("theorem1_rhs");
    for &m in &config.checkpoints() {
        for &n in &config.checkpoints() {
            if n >= 1 && n <= sd.horizon() {
                let terms = theorem1_rhs(&cert, &sd, &inputs, m, n)?;
                rhs.push_mn(m, n, terms.total, 0.0, None);
                res.reports.bound_terms.push((m, n, terms));
            }
        }
    }
    res.series.push(rhs);
    res.reports.certificate = Some(cert.clone());
    Ok(Some(Certified { sd, cert, inputs }))
}

fn verify_theorem1<L>(ctx: &GridCtx<L>, config: &ExperimentConfig, res: &mut RunResult) -> Result<()>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    let Some(Certified { sd, cert, inputs }) = certify_part(ctx, config, res)? else {
        return Ok(());
    };
    let proxy = config.horizons.proxy;
    let eta_f = sd.eta_f(&ctx.fv);
    let eta_fx = ctx.on_types(&eta_f);
    let (theta1, beta) = (sd.theta1, sd.beta);
    let cap = particle_cap::<L::Type>(config);
    let obs = |g: &Generation<L::Type>| {
        let v = normalised_observable([g], &ctx.fx, theta1, beta)?[0];
        let w = normalised_observable([g], &eta_fx, theta1, 0)?[0];
        Ok(vec![v, w])
    };
    let (summaries, values) = gather(config, |_, rng| {
        let s = observe_run(ctx.law, ctx.g0(), proxy, rng, cap, &obs)?;
        let sizes = s.sizes.clone();
        Ok((s, sizes))
    })?;
    res.set_replicates(summaries);

    let tracks: Vec<MartingaleTrack> = values
        .iter()
        .enumerate()
        .map(|(i, s)| MartingaleTrack { replicate_id: i, theta1, values: s.values.iter().map(|v| v[1]).collect() })
        .collect();
    let evaluations: Vec<Vec<f64>> = values.iter().map(|s| s.values.iter().map(|v| v[0]).collect()).collect();

    let mean_limit = eta_f[ctx.start_cell];
    let mut mart = Series::new("martingale");
    for (n, est) in column_means(&values, 1).iter().enumerate() {
        mart.push(n, est.mean, est.stderr, Some(mean_limit));
    }
    res.series.push(mart);

    let inc = martingale_increment_test(&tracks)?;
    res.check(
        Check::new("martingale_increments", holds_if(inc.flagged.len() <= 1), inc.flagged.len() as f64)
            .target(1.0)
            .detail(format!("flagged {:?}", inc.flagged)),
    );
    res.reports.increments = Some(inc);

    let g0p = inputs.g0_p_psi2p.powf(1.0 / config.p);
    let gap = cert.c0 / cert.theta1 * inputs.eta_f_norm * cert.gamma_tail(proxy) * g0p;
    let boot_seed = derive_seed(config.seed, "bootstrap");
    let mut lp = Series::new("lp_error");
    let checkpoints = config.checkpoints();
    let pairs = checkpoints.iter().flat_map(|&m| checkpoints.iter().map(move |&n| (m, n)));
    for (m, n) in pairs.filter(|&(m, n)| m + n <= proxy && n >= 1 && n <= sd.horizon()) {
        let terms = theorem1_rhs(&cert, &sd, &inputs, m, n)?;
        let report = lp_error(&tracks, &evaluations, config.p, m, n, proxy, boot_seed)?.with_bound(terms.total + gap, gap);
        let verdict = holds_if(report.within_bound(AGREEMENT_SIGMAS).unwrap_or(false));
        res.check(
            Check::new(format!("theorem1_m{m}_n{n}"), verdict, report.lhs_estimate)
                .target(terms.total + gap)
                .stderr(report.stderr),
        );
        lp.push_mn(m, n, report.lhs_estimate, report.stderr, report.rhs_bound);
        res.reports.lp_errors.push(report);
    }
    res.series.push(lp);
    Ok(())
}

fn llogl<L>(ctx: &GridCtx<L>, config: &ExperimentConfig, res: &mut RunResult) -> Result<()>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    if let ModelConfig::Cascade { spec } = &config.model {
        let law = CascadeLaw::new(spec.clone(), false)?;
        let mut rng = derive_stream(derive_seed(config.seed, "liu"), 0);
        let mut reports = liu_conditions(&law, config.p);
        reports.extend(liu_conditions_mc(&law, config.p, config.replicates.max(2), &mut rng)?);
        for (i, r) in reports.into_iter().enumerate() {
            let source = if i < 2 { "closed_form" } else { "monte_carlo" };
            let value = r.numbers.first().map_or(f64::NAN, |q| q.value);
            res.check(Check::new(format!("{:?}_{source}", r.condition), r.verdict, value));
            res.reports.llogl.push(r);
        }
    }
    let psi1 = ctx.psi(&config.certify.psi1, "psi1")?;
    let k1 = build_mean_kernel(ctx.law, &ctx.grid, 1.0)?;
    let Some(sd) = spectral_part(&k1, &ctx.fv, &psi1, config.horizons.n_max, res)? else {
        return Ok(());
    };
    let kp = build_mean_kernel(ctx.law, &ctx.grid, config.p)?;
    let eta_f = sd.eta_f(&ctx.fv);
    let eb = eb_check(&k1, &ctx.fv, &psi1, &eta_f, sd.theta1, config.horizons.n_max)?;
    res.check(Check::new("ExponentialBehaviour", eb.verdict, eb.number("alpha_last").map_or(f64::NAN, |q| q.value)));
    res.reports.llogl.push(eb);

    let mut e0 = DVector::zeros(ctx.grid.len());
    e0[ctx.start_cell] = 1.0;
    let setup = SeriesSetup {
        f: ctx.fv.clone(),
        k: 1,
        rho: None,
        theta1: sd.theta1,
        n_max: config.horizons.n_max,
        budget: config.certify.budget.unwrap_or(config.replicates).max(2),
        g0: e0.clone(),
        g0_p: e0,
        particle_cap: particle_cap::<L::Type>(config),
    };
    let mut rng = derive_stream(derive_seed(config.seed, "dispersion-series"), 0);
    let rep = hfk_partial_sums(ctx.law, &k1, &kp, &setup, &mut rng)?;
    let (mut first, mut second) = (Series::new("dispersion_first"), Series::new("dispersion_second"));
    for t in &rep.series {
        first.push(t.n, t.first_partial, t.first_stderr, None);
        second.push(t.n, t.second_partial, t.second_stderr, None);
    }
    res.series.push(first);
    res.series.push(second);
    res.check(Check::new("DispersionSeries", rep.verdict, rep.series.last().map_or(f64::NAN, |t| t.second_partial)));
    res.reports.llogl.push(rep);
    Ok(())
}

fn cascade(config: &ExperimentConfig, res: &mut RunResult) -> Result<()> {
    let ModelConfig::Cascade { spec } = &config.model else {
        return Err(unsupported(Pipeline::Cascade, &config.model));
    };
    let law = CascadeLaw::new(spec.clone(), false).map_err(config_err)?;
    let theta1 = law.mean_mass();
    if !(theta1 > 0.0) {
        return Err(Error::Config("cascade has zero mean offspring mass".into()));
    }
    let horizon = config.horizons.n_max;
    let cap = particle_cap::<()>(config);
    let obs = |g: &Generation<()>| Ok(vec![g.total_mass() * theta1.powi(-(g.index as i32))]);
    let (summaries, values) = gather(config, |_, rng| {
        let s = observe_run(&law, Generation::single(()), horizon, rng, cap, &obs)?;
        let sizes = s.sizes.clone();
        Ok((s, sizes))
    })?;
    res.set_replicates(summaries);
    let tracks: Vec<MartingaleTrack> = values
        .iter()
        .enumerate()
        .map(|(i, s)| MartingaleTrack { replicate_id: i, theta1, values: s.values.iter().map(|v| v[0]).collect() })
        .collect();

    let mut mart = Series::new("martingale");
    for (n, est) in column_means(&values, 0).iter().enumerate() {
        mart.push(n, est.mean, est.stderr, Some(1.0));
        res.check(Check::new(format!("unit_mean_{n}"), agreement(est, 1.0), est.mean).target(1.0).stderr(est.stderr));
    }
    res.series.push(mart);

    let mut degeneracy = Series::new("degeneracy");
    if !tracks.is_empty() {
        for n in 0..=horizon {
            let frac = degeneracy_probe(&tracks, DEGENERACY_EPSILON, n)?;
            let se = (frac * (1.0 - frac) / tracks.len() as f64).sqrt();
            degeneracy.push(n, frac, se, None);
        }
    }
    res.series.push(degeneracy);

    let inc = martingale_increment_test(&tracks)?;
    res.check(
        Check::new("martingale_increments", holds_if(inc.flagged.len() <= 1), inc.flagged.len() as f64)
            .target(1.0)
            .detail(format!("flagged {:?}", inc.flagged)),
    );
    res.reports.increments = Some(inc);
    res.reports.llogl = liu_conditions(&law, config.p);
    Ok(())
}

fn kernel_law(config: &ExperimentConfig) -> Result<(KernelProductLaw, usize, DVector<f64>)> {
    let ModelConfig::KernelProducts { x, f, .. } = &config.model else {
        return Err(unsupported(Pipeline::KernelProducts, &config.model));
    };
    let (dim, outcomes) = config.model.kernel_outcomes().expect("kernel model")?;
    let law = KernelProductLaw::new(dim, outcomes).map_err(config_err)?;
    Ok((law, *x, DVector::from_column_slice(f)))
}

fn kernel_products(config: &ExperimentConfig, res: &mut RunResult) -> Result<()> {
    let (law, x, f) = kernel_law(config)?;
    let horizon = config.horizons.n_max;
    let cap = particle_cap::<crate::zoo::ScaledKernel>(config);
    let obs = |g: &Generation<crate::zoo::ScaledKernel>| kernel_product_observable([g], x, &f);
    let (summaries, values) = gather(config, |_, rng| {
        let s = observe_run(&law, law.initial(), horizon, rng, cap, &obs)?;
        let sizes = s.sizes.clone();
        Ok((s, sizes))
    })?;
    res.set_replicates(summaries);
    let p = law.mean_matrix();
    let mut v = f.clone();
    let mut series = Series::new("observable");
    for (n, est) in column_means(&values, 0).iter().enumerate() {
        if n > 0 {
            v = &p * v;
        }
        let target = v[x];
        series.push(n, est.mean, est.stderr, Some(target));
        res.check(
            Check::new(format!("many_to_one_{n}"), agreement(est, target), est.mean).target(target).stderr(est.stderr),
        );
    }
    res.series.push(series);
    Ok(())
}

fn ifs(config: &ExperimentConfig, res: &mut RunResult) -> Result<()> {
    let ModelConfig::Ifs { maps, probs, weights, .. } = &config.model else {
        return Err(unsupported(Pipeline::Ifs, &config.model));
    };
    let law = IfsLaw::new(maps.clone(), probs.clone(), weights.clone()).map_err(config_err)?;
    let options = ProbeOptions {
        grid_exponent: config.grid.exponent,
        n_max: config.horizons.n_max,
        p: config.p,
        c3_budget: config.certify.budget.unwrap_or(0),
    };
    let mut rng = derive_stream(derive_seed(config.seed, "ifs-dispersion"), 0);
    let rep = ifs_convergence_probe(&law, |x| x, 1.0, options, &mut rng)?;
    let first = rep.alpha.first().copied().unwrap_or(0.0);
    let mut series = Series::new("alpha");
    for (i, a) in rep.alpha.iter().enumerate() {
        series.push(i + 1, *a, 0.0, Some(first * (rep.slope_bound * i as f64).exp()));
    }
    res.series.push(series);
    let verdict = match rep.rate_ok {
        Some(true) => Verdict::Holds,
        Some(false) => Verdict::Fails,
        None => Verdict::Inconclusive,
    };
    let slope = rep.fit.map_or(f64::NAN, |f| f.slope);
    res.check(
        Check::new("alpha_rate", verdict, slope)
            .target(rep.slope_bound)
            .detail(format!("discretisation error {:.3e}", rep.discretisation_error)),
    );
    if !rep.bounds.is_empty() {
        let mut rhs = Series::new("theorem1_rhs");
        for &(m, n, b) in &rep.bounds {
            rhs.push_mn(m, n, b, 0.0, None);
        }
        res.series.push(rhs);
    }
    res.reports.spectral = Some(rep.spectral.clone());
    res.reports.certificate = rep.certificate.clone();
    res.reports.ifs = Some(rep);
    Ok(())
}

fn lineage<L>(ctx: &GridCtx<L>, config: &ExperimentConfig, res: &mut RunResult) -> Result<()>
where
    L: MomentMeasure,
    L::Type: GridPoint,
{
    let horizon = config.horizons.n_max;
    let options = SimOptions { mode: StorageMode::TreeRetention, particle_cap: particle_cap::<L::Type>(config) };
    // per replicate: A_n(f) for n = 1..=horizon, and whether A_n(1) = G_n(1) bit for bit
    let (summaries, values) = gather(config, |_, rng| {
        let traj = simulate(ctx.law, ctx.g0(), horizon, rng, options, |_| {})?;
        let averages: Vec<f64> = lineage_average_observable(&traj, &ctx.fx)?.into_iter().map(|(_, a)| a).collect();
        let unit = lineage_average_observable(&traj, |_| 1.0)?;
        let exact = unit.iter().all(|&(n, a)| a.to_bits() == traj.generations()[n].total_mass().to_bits());
        Ok(((averages, exact), traj.sizes().to_vec()))
    })?;
    res.set_replicates(summaries);

    let target = if ctx.ergodic_chain {
        let k1 = build_mean_kernel(ctx.law, &ctx.grid, 1.0)?;
        let sd = power_iteration(&k1, POWER_TOL, POWER_MAX_ITER)?;
        Some(sd.nu_vector().dot(&ctx.fv) / sd.nu.iter().sum::<f64>())
    } else {
        None
    };
    let mut series = Series::new("lineage");
    let mut last = None;
    for n in 1..=horizon {
        let est = MeanEstimate::from_samples(&values.iter().map(|v| v.0[n - 1]).collect::<Vec<_>>());
        series.push(n, est.mean, est.stderr, target);
        last = Some(est);
    }
    res.series.push(series);
    if let (Some(t), Some(est)) = (target, last) {
        res.check(Check::new("stationary_limit", agreement(&est, t), est.mean).target(t).stderr(est.stderr));
    }
    let all_exact = values.iter().all(|v| v.1);
    res.check(Check::new("unit_lineage_equals_mass", holds_if(all_exact), values.len() as f64));

    // the incremental bookkeeping must reproduce the enriched-type process on replicate 0
    if config.replicates > 0 {
        let enriched = EnrichedLaw::new(ctx.law, &ctx.fx);
        let mut via_enriched = Vec::with_capacity(horizon);
        let run = simulate(
            &enriched,
            enriched.initial(&ctx.g0()),
            horizon,
            &mut derive_stream(config.seed, 0),
            SimOptions { mode: StorageMode::GenerationOnly, ..options },
            |g| {
                if g.index > 0 {
                    via_enriched.push(g.integrate(|t| t.average()));
                }
            },
        );
        let verdict = match run {
            Ok(_) => {
                let via_enriched = via_enriched.into_iter().collect::<Result<Vec<f64>>>()?;
                let incremental = values.first().filter(|_| !res.replicates[0].capped).map(|v| &v.0);
                match incremental {
                    Some(inc) => holds_if(inc.iter().zip(&via_enriched).all(|(a, b)| a.to_bits() == b.to_bits())),
                    None => Verdict::Inconclusive,
                }
            }
            Err(Error::PopulationCap { .. }) => Verdict::Inconclusive,
            Err(e) => return Err(e),
        };
        res.check(Check::new("enriched_process_agrees", verdict, 0.0));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn replicate_order_and_streams_are_fixed() {
        let a: Vec<u64> = run_replicates(9, 64, |_, rng| rng.random());
        let b = with_threads(Some(3), || run_replicates(9, 64, |_, rng| rng.random::<u64>())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[5], derive_stream(9, 5).random::<u64>());
    }

    #[test]
    fn deterministic_single_child_has_zero_error() {
        let cfg = config(
            r#"
            pipeline = "verify-theorem1"
            replicates = 100
            [horizons]
            n_max = 4
            proxy = 8
            [certify]
            psi2 = [0.0]
            [model]
            kind = "markov-chain"
            transition = [[1.0]]
            start = 0
            f = [3.0]
            "#,
        );
        let res = run_experiment(&cfg).unwrap();
        assert!(!res.reports.lp_errors.is_empty());
        assert!(res.reports.lp_errors.iter().all(|r| r.lhs_estimate == 0.0));
        assert_eq!(res.verdict, Verdict::Holds, "{:#?}", res.checks);
    }

    #[test]
    fn finite_simulation_matches_many_to_one() {
        let cfg = config(
            r#"
            replicates = 2000
            [horizons]
            n_max = 5
            proxy = 5
            [model]
            kind = "finite"
            start = 0
            f = [1.0, 0.0]
            outcomes = [
                [{ prob = 0.5, children = [[0.5, 0], [0.5, 1]] }, { prob = 0.5, children = [[1.0, 1]] }],
                [{ prob = 1.0, children = [[0.9, 0]] }],
            ]
            "#,
        );
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.verdict, Verdict::Holds, "{:#?}", res.checks);
        assert_eq!(res.telemetry.completed_replicates, 2000);
        let total: usize = res.replicates.iter().map(|r| r.sizes.iter().sum::<usize>()).sum();
        assert_eq!(res.telemetry.total_particles, total as u64);
    }

    #[test]
    fn capped_replicates_are_recorded() {
        let cfg = config(
            r#"
            pipeline = "simulate"
            replicates = 4
            [horizons]
            n_max = 12
            proxy = 12
            [caps]
            particles = 100
            [model]
            kind = "cascade"
            spec = { kind = "deterministic", weights = [0.5, 0.5] }
            "#,
        );
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.telemetry.capped_replicates, 4);
        assert_eq!(res.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn unsupported_combination_is_a_config_error() {
        let cfg = config(
            r#"
            pipeline = "certify"
            replicates = 4
            [horizons]
            n_max = 2
            proxy = 2
            [model]
            kind = "kernel-products"
            x = 0
            f = [1.0]
            outcomes = [{ prob = 1.0, kernels = [[[0.5]]] }]
            "#,
        );
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    }
}
