use nalgebra::DVector;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use wbp_core::harness::{run_experiment, run_replicates, ExperimentConfig};
use wbp_core::kernels::{build_mean_kernel, power_iteration, TypeGrid};
use wbp_core::martingale::{
    biggins_track, cauchy_distance, centered_functional, degeneracy_probe, hfk_partial_sums, log_a, lp_error,
    martingale_increment_test, MartingaleTrack, SeriesSetup, Verdict,
};
use wbp_core::population::{simulate, FiniteLaw, Generation, Outcome, ReproductionLaw, SimOptions};
use wbp_core::rng::derive_stream;
use wbp_core::stats::fit_rate;
use wbp_core::zoo::{CascadeLaw, CascadeSpec, WeightOutcome};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, rng_seed: RngSeed::Fixed(0xfeed), failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn log_a_is_continuous_at_the_knee(a in 1.0f64..6.0) {
        let knee = a.exp();
        let below = log_a(a, knee * (1.0 - 1e-12));
        let at = log_a(a, knee);
        prop_assert!((below - at).abs() <= 1e-9 * at.max(1.0), "{below} vs {at}");
    }

    #[test]
    fn log_a_is_non_decreasing(a in 1.0f64..6.0, x in 0.0f64..1e4, dx in 0.0f64..1e3) {
        prop_assert!(log_a(a, x) <= log_a(a, x + dx));
    }

    #[test]
    fn x_log_a_is_midpoint_convex(a in 1.0f64..6.0, x in 0.0f64..1e3, y in 0.0f64..1e3) {
        let h = |t: f64| t * log_a(a, t);
        let mid = h(0.5 * (x + y));
        prop_assert!(mid <= 0.5 * (h(x) + h(y)) * (1.0 + 1e-12) + 1e-12);
    }
}

/// Independent two-point weights `1/2 ± 1/√12`: `E Σu = 1`, `E Σu² = 2/3`, random total mass.
fn two_point_cascade() -> CascadeLaw {
    let (lo, hi) = (0.5 - 1.0 / 12f64.sqrt(), 0.5 + 1.0 / 12f64.sqrt());
    let outcomes = [[lo, lo], [lo, hi], [hi, lo], [hi, hi]]
        .iter()
        .map(|w| WeightOutcome { prob: 0.25, weights: w.to_vec() })
        .collect();
    CascadeLaw::new(CascadeSpec::Mixture { outcomes }, true).unwrap()
}

fn mass_tracks<L: ReproductionLaw<Type = ()>>(law: &L, seed: u64, replicates: usize, horizon: usize) -> Vec<MartingaleTrack> {
    run_replicates(seed, replicates, |i, rng| {
        let mut values = Vec::with_capacity(horizon + 1);
        simulate(law, Generation::single(()), horizon, rng, SimOptions::default(), |g| values.push(g.total_mass())).unwrap();
        MartingaleTrack { replicate_id: i, theta1: 1.0, values }
    })
}

#[test]
fn two_point_cascade_has_the_closed_form_moments() {
    let law = two_point_cascade();
    assert!((law.mean_mass() - 1.0).abs() < 1e-15);
    assert!((law.sum_of_powers(2.0) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn l2_error_decays_at_half_log_two_thirds() {
    // E(W_{k+1} − W_k)² = (2/3)^k Var(Σu), so ‖W_{m+n} − W_N‖₂ ∝ (2/3)^{(m+n)/2}
    let target = 0.5 * (2.0f64 / 3.0).ln();
    let (n, proxy) = (4, 16);
    let tracks = mass_tracks(&two_point_cascade(), 4040, 2000, proxy);
    let evaluations: Vec<Vec<f64>> = tracks.iter().map(|t| t.values.clone()).collect();
    let series: Vec<(usize, f64)> = (2..=6)
        .map(|m| (m, lp_error(&tracks, &evaluations, 2.0, m, n, proxy, 4041).unwrap().lhs_estimate))
        .collect();
    let fit = fit_rate(&series, 2..=6).unwrap();
    assert!(((fit.slope - target) / target).abs() <= 0.15, "slope {} vs {target}", fit.slope);
}

#[test]
fn cauchy_distance_decays_no_slower_than_the_certified_rate() {
    let target = 0.5 * (2.0f64 / 3.0).ln();
    let tracks = mass_tracks(&two_point_cascade(), 5050, 4000, 14);
    let series: Vec<(usize, f64)> =
        (2..=10).map(|m| (m, cauchy_distance(&tracks, 2.0, m, 4, 5051).unwrap().estimate)).collect();
    let fit = fit_rate(&series, 2..=10).unwrap();
    assert!(fit.slope <= target * 0.85, "slope {} vs certified {target}", fit.slope);
}

#[test]
fn scaled_uniform_cascade_degenerates_by_generation_sixty() {
    let law = CascadeLaw::scaled_uniform(2.0).unwrap();
    let tracks = mass_tracks(&law, 6060, 10_000, 60);
    let fractions: Vec<f64> = [20, 40, 60].iter().map(|&n| degeneracy_probe(&tracks, 1e-3, n).unwrap()).collect();
    assert!(fractions.windows(2).all(|w| w[0] <= w[1]), "{fractions:?}");
    assert!(fractions[2] > 0.9, "{fractions:?}");
}

#[test]
fn increments_are_rarely_flagged() {
    // two-type law with a non-trivial right eigenvector
    let law = FiniteLaw::new(vec![
        vec![
            Outcome { prob: 0.5, children: vec![(0.6, 0), (0.7, 1)] },
            Outcome { prob: 0.5, children: vec![(1.1, 1)] },
        ],
        vec![Outcome { prob: 1.0, children: vec![(0.5, 0), (0.25, 0), (0.25, 1)] }],
    ])
    .unwrap();
    let q = build_mean_kernel(&law, &TypeGrid::finite(2), 1.0).unwrap();
    let sd = power_iteration(&q, 1e-14, 1_000_000).unwrap();
    let tracks = run_replicates(7070, 10_000, |i, rng| {
        let t = simulate(&law, Generation::single(0usize), 12, rng, SimOptions::retained(), |_| {}).unwrap();
        biggins_track(t.generations(), |x| sd.eta[*x], sd.theta1, i).unwrap()
    });
    let rep = martingale_increment_test(&tracks).unwrap();
    assert!(rep.flagged.is_empty(), "flagged {:?}", rep.flagged);

    let cascade = mass_tracks(&two_point_cascade(), 7071, 10_000, 12);
    assert!(martingale_increment_test(&cascade).unwrap().flagged.is_empty());
}

#[test]
fn conserved_mass_gives_exactly_null_functionals() {
    let law = CascadeLaw::uniform_split();
    let k1 = build_mean_kernel(&law, &TypeGrid::finite(1), 1.0).unwrap();
    let kp = build_mean_kernel(&law, &TypeGrid::finite(1), 2.0).unwrap();
    let f = DVector::from_element(1, 2.5);
    let mut rng = derive_stream(8080, 0);
    for k in 1..=4 {
        assert_eq!(centered_functional(&law, &k1, &f, 0, k, &mut rng, 1_000_000).unwrap(), 0.0);
    }
    let setup = SeriesSetup {
        f,
        k: 1,
        rho: None,
        theta1: 1.0,
        n_max: 20,
        budget: 200,
        g0: DVector::from_element(1, 1.0),
        g0_p: DVector::from_element(1, 1.0),
        particle_cap: 1_000_000,
    };
    let rep = hfk_partial_sums(&law, &k1, &kp, &setup, &mut rng).unwrap();
    assert!(rep.series.iter().all(|t| t.first_partial == 0.0 && t.second_partial == 0.0));
}

#[test]
fn theorem1_bound_holds_on_the_two_point_cascade() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
        pipeline = "verify-theorem1"
        seed = 9090
        replicates = 400
        p = 2.0
        [horizons]
        n_max = 8
        proxy = 16
        [certify]
        checkpoints = [2, 4, 6, 8]
        [model]
        kind = "cascade"
        spec = { kind = "mixture", outcomes = [
            { prob = 0.25, weights = [0.21132486540518713, 0.21132486540518713] },
            { prob = 0.25, weights = [0.21132486540518713, 0.7886751345948129] },
            { prob = 0.25, weights = [0.7886751345948129, 0.21132486540518713] },
            { prob = 0.25, weights = [0.7886751345948129, 0.7886751345948129] },
        ] }
        "#,
    )
    .unwrap();
    let res = run_experiment(&cfg).unwrap();
    assert!(!res.reports.lp_errors.is_empty());
    for r in &res.reports.lp_errors {
        assert_eq!(r.within_bound(4.0), Some(true), "m {} n {}: {} vs {:?}", r.m, r.n, r.lhs_estimate, r.rhs_bound);
    }
    assert!(res.checks.iter().filter(|c| c.name.starts_with("theorem1_")).all(|c| c.verdict == Verdict::Holds));
}
