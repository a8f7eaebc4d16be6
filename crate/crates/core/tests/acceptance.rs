//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wbp_core::harness::{run_experiment, with_threads, ExperimentConfig, RunResult};
use wbp_core::kernels::{eigen_residuals, estimate_beta, power_iteration, MeanKernel};
use wbp_core::martingale::{
    degeneracy_probe, liu_conditions, liu_conditions_mc, lp_error, MartingaleTrack, Verdict,
};
use wbp_core::population::{simulate, Generation, SimOptions};
use wbp_core::rng::derive_stream;
use wbp_core::stats::fit_rate;
use wbp_core::zoo::{
    doob_transition, ifs_convergence_probe, kernel_norm, AffineMap, CascadeLaw, CascadeSpec, IfsLaw, ProbeOptions,
};

fn report(id: &str, what: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("ACCEPTANCE {id} {} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn run(text: &str) -> RunResult {
    run_experiment(&ExperimentConfig::from_toml_str(text).unwrap()).unwrap()
}

fn within(start: Instant, budget: Duration) -> bool {
    start.elapsed() <= budget
}

/// Uniform-split cascade tracks `W_n = G_n(1)` up to `horizon`.
fn cascade_tracks(law: &CascadeLaw, seed: u64, replicates: usize, horizon: usize) -> Vec<MartingaleTrack> {
    let theta1 = law.mean_mass();
    wbp_core::harness::run_replicates(seed, replicates, |i, rng| {
        let mut values = Vec::with_capacity(horizon + 1);
        simulate(law, Generation::single(()), horizon, rng, SimOptions::default(), |g| {
            values.push(g.total_mass() / theta1.powi(g.index as i32))
        })
        .unwrap();
        MartingaleTrack { replicate_id: i, theta1, values }
    })
}

const FLIP: &str = r#"
    pipeline = "simulate"
    seed = 101
    replicates = 10000
    [horizons]
    n_max = 8
    proxy = 8
    [model]
    kind = "finite"
    start = 0
    f = F
    outcomes = [
        [{ prob = 1.0, children = [[0.5, 1], [0.5, 1]] }],
        [{ prob = 1.0, children = [[0.5, 0], [0.5, 0]] }],
    ]
"#;

#[test]
fn criterion_01_many_to_one_exactness() {
    let start = Instant::now();
    let q = MeanKernel::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for f in [[1.0, 0.0], [0.0, 1.0]] {
        let res = run(&FLIP.replace("f = F", &format!("f = [{:.1}, {:.1}]", f[0], f[1])));
        let series = res.series("mean_f").unwrap();
        let mut v = DVector::from_column_slice(&f);
        for row in &series.rows {
            if row.n > 0 {
                v = q.apply(&v);
            }
            let gap = (row.estimate - v[0]).abs();
            worst = worst.max(gap);
            ok &= gap <= 4.0 * row.stderr;
        }
        ok &= series.rows.len() == 9;
    }
    let pass = ok && within(start, Duration::from_secs(60));
    assert!(report("#1", "many-to-one exactness", pass, format!("max |mean − δ_xQⁿf| = {worst:e}, {:?}", start.elapsed())));
}

#[test]
fn criterion_02_martingale_property() {
    let start = Instant::now();
    let res = run(r#"
        pipeline = "cascade"
        seed = 202
        replicates = 10000
        [horizons]
        n_max = 12
        proxy = 12
        [model]
        kind = "cascade"
        spec = { kind = "uniform-split" }
    "#);
    let inc = res.reports.increments.as_ref().unwrap();
    let pass = inc.increments.len() == 12 && inc.flagged.len() <= 1 && within(start, Duration::from_secs(120));
    assert!(report("#2", "martingale increments", pass, format!("flagged {:?}, {:?}", inc.flagged, start.elapsed())));
}

const THEOREM1: &str = r#"
    pipeline = "verify-theorem1"
    seed = 303
    replicates = 200
    p = 2.0
    [horizons]
    n_max = 10
    proxy = 20
    [certify]
    checkpoints = [2, 4, 6, 8, 10]
    [model]
    kind = "cascade"
    spec = { kind = "uniform-split" }
"#;

#[test]
fn criterion_03_theorem1_bound() {
    let start = Instant::now();
    let res = run(THEOREM1);
    let cert = res.reports.certificate.as_ref().expect("certificate");
    let gamma_ok = cert
        .gamma
        .iter()
        .enumerate()
        .all(|(n, g)| (g - (2.0f64 / 3.0).powf(n as f64 / 2.0)).abs() <= 1e-12);
    let constants_ok = (cert.theta1 - 1.0).abs() < 1e-12 && (cert.c1 - 1.0).abs() < 1e-12 && gamma_ok;
    let mut worst_slack = f64::INFINITY;
    let mut all = true;
    for r in &res.reports.lp_errors {
        let rhs = r.rhs_bound.unwrap();
        worst_slack = worst_slack.min(rhs - (r.lhs_estimate - 4.0 * r.stderr));
        all &= r.lhs_estimate - 4.0 * r.stderr <= rhs;
    }
    let pass = constants_ok && all && res.reports.lp_errors.len() == 25 && within(start, Duration::from_secs(300));
    assert!(report(
        "#3",
        "Theorem-1 bound",
        pass,
        format!("{} grid points, min slack {worst_slack:.4}, constants ok {constants_ok}, {:?}", res.reports.lp_errors.len(), start.elapsed())
    ));
}

#[test]
fn criterion_04_l2_rate() {
    let target = 0.5 * (2.0f64 / 3.0).ln();
    let law = CascadeLaw::uniform_split();
    let (n, proxy) = (4, 20);
    let tracks = cascade_tracks(&law, 404, 200, proxy);
    let evaluations: Vec<Vec<f64>> = tracks.iter().map(|t| t.values.clone()).collect();
    let series: Vec<(usize, f64)> = [2usize, 4, 6, 8, 10]
        .iter()
        .map(|&m| (m, lp_error(&tracks, &evaluations, 2.0, m, n, proxy, 404).unwrap().lhs_estimate))
        .collect();
    let (pass, detail) = match fit_rate(&series, 2..=10) {
        Ok(fit) => (
            ((fit.slope - target) / target).abs() <= 0.15,
            format!("slope {:.4} vs {target:.4}; errors {series:?}", fit.slope),
        ),
        Err(e) => (false, format!("errors {series:?}; rate fit impossible: {e}")),
    };
    assert!(report("#4", "L² rate ½·log(2/3)", pass, detail));
}

#[test]
fn criterion_05_jordan_beta() {
    let start = Instant::now();
    let q = MeanKernel::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]], 1.0).unwrap();
    let fit = estimate_beta(&q, &DVector::from_element(2, 1.0), 500..=1000).unwrap();
    let pass = fit.beta == 1 && (fit.theta1 - 2.0).abs() <= 1e-6 && within(start, Duration::from_secs(1));
    assert!(report("#5", "Jordan-block β", pass, format!("θ₁ = {}, β = {} (raw {:.4})", fit.theta1, fit.beta, fit.beta_raw)));
}

#[test]
fn criterion_06_perron_consistency() {
    let mut rng = derive_stream(606, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>() + 1e-3);
        let q = MeanKernel::from_matrix(m, wbp_core::kernels::TypeGrid::finite(5), 1.0).unwrap();
        let sd = power_iteration(&q, 1e-14, 100_000).unwrap();
        let (r, l) = eigen_residuals(&q, &sd);
        worst = worst.max(r).max(l);
    }
    assert!(report("#6", "Perron consistency", worst <= 1e-8, format!("max residual {worst:e}")));
}

#[test]
fn criterion_07_ifs_alpha_decay() {
    let start = Instant::now();
    let law = IfsLaw::new(
        vec![AffineMap { a: 0.5, b: 0.0 }, AffineMap { a: 0.5, b: 0.5 }],
        vec![0.5, 0.5],
        CascadeSpec::UniformSplit,
    )
    .unwrap();
    let opts = ProbeOptions { grid_exponent: 10, ..ProbeOptions::default() };
    let rep = ifs_convergence_probe(&law, |x| x, 1.0, opts, &mut derive_stream(707, 0)).unwrap();
    let slope = rep.fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let bound = 0.5f64.ln() + 0.1;
    let pass = slope <= bound && within(start, Duration::from_secs(120));
    assert!(report("#7", "IFS α-decay", pass, format!("slope {slope:.4} ≤ {bound:.4}, {:?}", start.elapsed())));
}

#[test]
fn criterion_08_doob_identity() {
    let q = MeanKernel::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.5]], 1.0).unwrap();
    let d = doob_transition(&q, 1e-14, 1_000_000).unwrap();
    let direct = power_iteration(&q, 1e-14, 1_000_000).unwrap().theta1;
    let gap = (direct - d.theta0 * d.sup_mass).abs();
    assert!(report("#8", "Doob identity", gap <= 1e-8, format!("θ₁ = {direct}, θ₀·sup = {}, gap {gap:e}", d.theta0 * d.sup_mass)));
}

#[test]
fn criterion_09a_llogl_uniform_split() {
    let start = Instant::now();
    let law = CascadeLaw::uniform_split();
    let closed = liu_conditions(&law, 2.0);
    let mc = liu_conditions_mc(&law, 2.0, 100_000, &mut derive_stream(909, 0)).unwrap();
    let sum_p = mc[0].number("sum_of_powers_p").unwrap();
    let holds = closed.iter().chain(&mc).all(|r| r.verdict == Verdict::Holds);
    let ci = (sum_p.value - 2.0 / 3.0).abs() <= 4.0 * sum_p.stderr;
    let tracks = cascade_tracks(&law, 909, 10_000, 12);
    let frac = degeneracy_probe(&tracks, 1e-3, 12).unwrap();
    let pass = holds && ci && frac < 0.5 && within(start, Duration::from_secs(300));
    assert!(report(
        "#9",
        "L log L probe, uniform split",
        pass,
        format!("verdict holds {holds}, E Σu² = {:.4} ± {:.4}, degeneracy(1e-3, 12) = {frac}", sum_p.value, sum_p.stderr)
    ));
}

#[test]
fn criterion_09b_llogl_scaled_uniform() {
    let start = Instant::now();
    let law = CascadeLaw::scaled_uniform(2.0).unwrap();
    let closed = liu_conditions(&law, 2.0);
    let fails = closed.iter().all(|r| r.verdict == Verdict::Fails);
    let sum_p = law.sum_of_powers(2.0);
    let tracks = cascade_tracks(&law, 910, 10_000, 40);
    let frac = degeneracy_probe(&tracks, 1e-3, 40).unwrap();
    let pass = fails && (sum_p - 4.0 / 3.0).abs() < 1e-15 && frac > 0.9 && within(start, Duration::from_secs(300));
    assert!(report(
        "#9",
        "L log L probe, (2U,0) cascade",
        pass,
        format!("verdict fails {fails}, E Σu² = {sum_p:.4}, degeneracy(1e-3, 40) = {frac}")
    ));
}

#[test]
fn criterion_10_lineage_averages() {
    let res = run(r#"
        pipeline = "lineage"
        seed = 1010
        replicates = 400
        [horizons]
        n_max = 1000
        proxy = 1000
        [model]
        kind = "markov-chain"
        transition = [[0.7, 0.3], [0.4, 0.6]]
        start = 0
        f = [1.0, 0.0]
    "#);
    let limit = res.find_check("stationary_limit").unwrap();
    let unit = res.find_check("unit_lineage_equals_mass").unwrap();
    let enriched = res.find_check("enriched_process_agrees").unwrap();
    // branching trees as well: A_n(1) = G_n(1) on every trajectory
    let branching = run(r#"
        pipeline = "lineage"
        seed = 1011
        replicates = 200
        [horizons]
        n_max = 10
        proxy = 10
        [model]
        kind = "finite"
        start = 0
        f = [0.3, 2.0]
        outcomes = [
            [{ prob = 0.5, children = [[0.6, 0], [0.7, 1]] }, { prob = 0.5, children = [[1.1, 1]] }],
            [{ prob = 1.0, children = [[0.5, 0], [0.25, 0], [0.25, 1]] }],
        ]
    "#);
    let unit_b = branching.find_check("unit_lineage_equals_mass").unwrap();
    let pass = [limit, unit, enriched, unit_b].iter().all(|c| c.verdict == Verdict::Holds)
        && (limit.target.unwrap() - 4.0 / 7.0).abs() < 1e-12;
    assert!(report(
        "#10",
        "lineage averages",
        pass,
        format!("A_1000(f) = {:.5} ± {:.5} vs π(f) = {:.5}", limit.value, limit.stderr.unwrap(), limit.target.unwrap())
    ));
}

#[test]
fn criterion_11_kernel_products() {
    let res = run(r#"
        pipeline = "kernel-products"
        seed = 1111
        replicates = 10000
        [horizons]
        n_max = 6
        proxy = 6
        [model]
        kind = "kernel-products"
        x = 0
        f = [1.0, -0.5]
        outcomes = [
            { prob = 0.5, kernels = [[[0.5, 0.2], [0.0, 0.4]], [[0.1, 0.3], [0.2, 0.2]]] },
            { prob = 0.5, kernels = [[[0.3, -0.1], [0.4, 0.1]]] },
        ]
    "#);
    let many_to_one = res.verdict == Verdict::Holds && res.checks.len() == 7;
    let mut rng = derive_stream(1112, 0);
    let mut sub = true;
    for _ in 0..1000 {
        let d = rng.random_range(1..=5);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        sub &= kernel_norm(&(&a * &b)) <= kernel_norm(&a) * kernel_norm(&b) * (1.0 + 1e-12);
    }
    let worst = res
        .series("observable")
        .unwrap()
        .rows
        .iter()
        .map(|r| if r.stderr > 0.0 { (r.estimate - r.bound.unwrap()).abs() / r.stderr } else { 0.0 })
        .fold(0.0, f64::max);
    assert!(report(
        "#11",
        "kernel products",
        many_to_one && sub,
        format!("max deviation {worst:.2} SE, sub-multiplicative on 1000 pairs: {sub}")
    ));
}

#[test]
fn criterion_12_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut files = 0;
    for (name, text) in [("theorem1", THEOREM1.replace("replicates = 200", "replicates = 100")), ("flip", FLIP.replace("f = F", "f = [1.0, 0.0]"))] {
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let mut outputs = Vec::new();
        for threads in [1usize, 4] {
            let out = dir.path().join(format!("{name}-{threads}"));
            let res = with_threads(Some(threads), || run_experiment(&cfg)).unwrap().unwrap();
            let mut written: Vec<(String, Vec<u8>)> = res
                .write_to(&out)
                .unwrap()
                .into_iter()
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect();
            written.sort();
            outputs.push(written);
        }
        files += outputs[0].len();
        identical &= outputs[0] == outputs[1];
    }
    assert!(report("#12", "reproducibility across thread counts", identical, format!("{files} files compared byte for byte")));
}
