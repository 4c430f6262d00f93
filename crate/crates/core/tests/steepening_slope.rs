mod common;

use chlab::integrate::rk4_step;
use chlab::rng::BrownianIncrements;
use chlab::slope::{
    bm_drift_max_mc, bm_drift_max_prob, comparison_sde_path, comparison_step, ito_slope_step, mc_breaking_probability,
    riccati_blowup_time, riccati_mean_bound, wilson_interval, SlopeModel, SlopeSDEParams, Z95,
};
use chlab::steepening::{breaking_time_bound, coth_envelope, detect_blowup, track, SlopeRecord};
use chlab::{simulate, Field, Grid, NoiseBasis, NoiseMode, SimConfig};
use proptest::prelude::*;

/// Integrates `ds/dt = f(s)` with RK4 until `t_end` or until `s` passes `-1e8`;
/// returns the final value and the time reached.
fn ode(s0: f64, t_end: f64, dt: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = s0;
    let mut t = 0.0;
    while t < t_end - 1e-12 {
        let h = dt.min(t_end - t).min(1e-3 / (1.0 + s.abs()));
        s = rk4_step(&[s], h, |x| vec![f(x[0])])[0];
        t += h;
        if s < -1e8 {
            break;
        }
    }
    (s, t)
}

#[test]
fn envelope_solves_the_riccati_equation() {
    for (s0, m) in [(-2.0, 0.5), (-2.0 * 2f64.sqrt(), 1.0), (-3.0, 0.0), (-10.0, 2.3)] {
        let tau = breaking_time_bound(s0, m).unwrap();
        for frac in [0.2, 0.5, 0.8] {
            let t = frac * tau;
            let (s, _) = ode(s0, t, 1e-3, |s| -0.5 * s * s + m);
            let e = coth_envelope(s0, m, t).unwrap();
            assert!((s - e).abs() < 1e-8 * e.abs(), "({s0}, {m}) at {t}: {s} vs {e}");
        }
        let (_, t_blow) = ode(s0, 2.0 * tau, 1e-3, |s| -0.5 * s * s + m);
        assert!((t_blow - tau).abs() < 1e-6, "({s0}, {m}): {t_blow} vs {tau}");
    }
    assert!((breaking_time_bound(-2.0, 0.5).unwrap() - 3f64.ln()).abs() < 1e-14);
    assert!((breaking_time_bound(-2.0 * 2f64.sqrt(), 1.0).unwrap() - 0.776_836_199_9).abs() < 1e-6);
    assert!(breaking_time_bound(-1e8, 1.0).unwrap() < 1e-7);
}

#[test]
fn mean_bound_solves_its_riccati_equation() {
    let p = SlopeSDEParams { s0: -6.0, m: 1.0, xi_norm: 1.0, eps: 0.1, dt: 1e-3, t_final: 1.0, threshold: -1e6 };
    let (a, b) = p.riccati_coefficients();
    let tb = riccati_blowup_time(&p).unwrap();
    let (_, t_blow) = ode(p.s0, 1.0, 1e-3, |s| -a * s * s + b);
    assert!((t_blow - tb).abs() < 1e-6);
    for t in [0.1, 0.3, 0.4] {
        let (s, _) = ode(p.s0, t, 1e-3, |s| -a * s * s + b);
        assert!((s - riccati_mean_bound(&p, t).unwrap()).abs() < 1e-8 * s.abs());
    }
}

#[test]
fn noiseless_comparison_path_follows_the_ode() {
    let p = SlopeSDEParams { s0: -1.0, m: 1.0, xi_norm: 0.0, eps: 0.1, dt: 1e-3, t_final: 0.8, threshold: -1e6 };
    let path = comparison_sde_path(&p, 0, 0, 100).unwrap();
    for (k, v) in path.values.iter().enumerate() {
        let t = k as f64 * 0.1;
        let (s, _) = ode(p.s0, t, 1e-4, |s| -(0.5 * s * s + 1.0));
        assert!((v - s).abs() < 1e-5 * s.abs(), "t {t}: {v} vs {s}");
    }
    // M = 0: the rational solution s0/(1 + s0 t/2)
    let p0 = SlopeSDEParams { m: 0.0, t_final: 1.5, ..p };
    let path = comparison_sde_path(&p0, 0, 0, 100).unwrap();
    for (k, v) in path.values.iter().enumerate() {
        let t = k as f64 * 0.1;
        let exact = -1.0 / (1.0 - 0.5 * t);
        assert!((v - exact).abs() < 1e-5 * exact.abs());
    }
}

/// Piecewise-linear interpolation of a record series.
fn at(records: &[SlopeRecord], t: f64, f: impl Fn(&SlopeRecord) -> f64) -> f64 {
    let i = records.partition_point(|r| r.t <= t).clamp(1, records.len() - 1);
    let (a, b) = (&records[i - 1], &records[i]);
    let th = (t - a.t) / (b.t - a.t);
    f(a) + th * (f(b) - f(a))
}

fn antisymmetric_records() -> Vec<SlopeRecord> {
    let g = Grid::new(2048, 3.0).unwrap();
    let c = 1.5;
    let u0 = Field::from_fn(&g, |x| -10.0 * (x - c) * (-(x - c).powi(2) / (2.0 * 0.0625)).exp()).unwrap();
    let cfg = SimConfig::deterministic(u0, 2e-4, 0.14, 5);
    let traj = simulate(&cfg, 0, 0).unwrap();
    track(&traj).unwrap().into_iter().filter(|r| r.s > -30.0).collect()
}

#[test]
fn slope_equation_reproduces_the_measured_slope() {
    // without noise, the slope equation fed with u(ν) and K∗(…)(ν) from the
    // tracked run must integrate to the slope measured on the run
    let recs = antisymmetric_records();
    let t_end = recs.last().unwrap().t;
    let dt = 1e-5;
    let mut s = recs[0].s;
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    let mut next = 1;
    while next < recs.len() {
        s = ito_slope_step(s, at(&recs, t, |r| r.u_at_nu), at(&recs, t, |r| r.kconv_at_nu), 0.0, dt, 0.0);
        t += dt;
        if t >= recs[next].t - 1e-12 {
            worst = worst.max((s - recs[next].s).abs() / recs[next].s.abs());
            next += 1;
        }
    }
    assert!(t_end > 0.1);
    assert!(worst < 1e-2, "relative mismatch {worst}");
}

#[test]
fn constant_noise_slope_is_path_independent() {
    let g = Grid::new(1024, 3.0).unwrap();
    let u0 = Field::from_fn(&g, |x| -10.0 * (x - 1.5) * (-(x - 1.5).powi(2) / 0.125).exp()).unwrap();
    let basis = NoiseBasis::new(&g, vec![NoiseMode::Constant { c: 1.0 }]).unwrap();
    let cfg = SimConfig::deterministic(u0, 2e-4, 0.1, 50).with_noise(basis);
    let runs: Vec<Vec<SlopeRecord>> = (0..3).map(|p| track(&simulate(&cfg, 5, p).unwrap()).unwrap()).collect();
    for r in &runs[1..] {
        assert_eq!(r.len(), runs[0].len());
        for (a, b) in r.iter().zip(&runs[0]) {
            // sub-grid shifts move the inflection against the nodes
            assert!((a.s - b.s).abs() < 5e-3 * b.s.abs(), "{} vs {}", a.s, b.s);
        }
    }
    // the inflection itself moves with the noise
    assert!((runs[1].last().unwrap().nu - runs[0].last().unwrap().nu).abs() > 1e-3);
}

#[test]
fn ito_slope_path_dominates_the_comparison_path() {
    // W̃ = −W couples the two equations; domination needs M ≥ K∗(…)(ν) − u²(ν)
    let recs = antisymmetric_records();
    let m = recs.iter().map(|r| r.kconv_at_nu - r.u_at_nu * r.u_at_nu).fold(0.0, f64::max);
    let xi = 1.0;
    let dt = 1e-5;
    let t_end = recs.last().unwrap().t;
    let steps = (t_end / dt) as u64;
    for path in 0..16 {
        let mut inc = BrownianIncrements::new(77, path, 1, dt).unwrap();
        let (mut s, mut sc) = (recs[0].s, recs[0].s);
        for k in 0..steps {
            let t = k as f64 * dt;
            let dw = inc.next_scalar(k, dt).unwrap();
            s = ito_slope_step(s, at(&recs, t, |r| r.u_at_nu), at(&recs, t, |r| r.kconv_at_nu), xi, dt, dw);
            sc = comparison_step(sc, m, xi, dt, -dw);
            if sc < -1e4 {
                break;
            }
            let t1 = t + dt;
            assert!(s >= sc - 0.02 * s.abs() * t1, "path {path} t {t1}: {s} < {sc}");
        }
    }
}

#[test]
fn breaking_fraction_grows_as_the_initial_slope_steepens() {
    let base = SlopeSDEParams { s0: -1.0, m: 1.0, xi_norm: 1.0, eps: 0.1, dt: 1e-3, t_final: 0.5, threshold: -100.0 };
    let mut prev: Option<(f64, f64)> = None;
    for s0 in [-1.0, -2.0, -3.0, -4.0, -5.0] {
        let p = SlopeSDEParams { s0, threshold: -100.0, ..base };
        let e = mc_breaking_probability(SlopeModel::Comparison, &p, 2000, 17, 100).unwrap();
        let se = (e.p_hat * (1.0 - e.p_hat) / e.n_paths as f64).sqrt();
        if let Some((q, qse)) = prev {
            assert!(e.p_hat + 2.0 * (se * se + qse * qse).sqrt() >= q, "p̂ fell from {q} to {}", e.p_hat);
        }
        prev = Some((e.p_hat, se));
    }
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let p = SlopeSDEParams { s0: -3.0, m: 1.0, xi_norm: 1.0, eps: 0.1, dt: 1e-3, t_final: 1.0, threshold: -100.0 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_breaking_probability(SlopeModel::Comparison, &p, 700, 3, 10).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
}

#[test]
fn drifted_maximum_matches_monte_carlo() {
    for (mu, sigma, a) in [(-1.0, 1.0, 1.0), (-0.5, 2.0, 3.0)] {
        let e = bm_drift_max_mc(mu, sigma, a, 20_000, 0.05, 400.0, 1e-12, 8).unwrap();
        let exact = bm_drift_max_prob(mu, sigma, a).unwrap();
        assert!((e.mean - exact).abs() < 3.0 * e.std_err, "{} ± {} vs {exact}", e.mean, e.std_err);
    }
}

#[test]
fn detection_on_a_run_that_never_steepens_is_empty() {
    let g = Grid::new(256, 40.0).unwrap();
    let u0 = Field::from_fn(&g, |x| (-(x - 20.0f64).powi(2) / 8.0).exp()).unwrap();
    let traj = simulate(&SimConfig::deterministic(u0, 1e-2, 1.0, 10), 0, 0).unwrap();
    let recs = track(&traj).unwrap();
    assert!(!recs.is_empty());
    assert_eq!(detect_blowup(&recs, -50.0), None);
}

proptest! {
    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as usize;
        let (lo, hi) = wilson_interval(k, n, Z95);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }

    #[test]
    fn envelope_lies_below_the_initial_slope(s0 in -20.0f64..-0.5, frac in 0.0f64..0.99, mfrac in 0.0f64..0.99) {
        let m = mfrac * 0.5 * s0 * s0;
        let t = frac * breaking_time_bound(s0, m).unwrap();
        let e = coth_envelope(s0, m, t).unwrap();
        prop_assert!(e <= s0 + 1e-12 * s0.abs());
    }

    #[test]
    fn drifted_maximum_is_monotone(mu in -3.0f64..-0.01, sigma in 0.1f64..3.0, a in 0.0f64..5.0, da in 0.01f64..1.0) {
        let p = bm_drift_max_prob(mu, sigma, a).unwrap();
        prop_assert!(bm_drift_max_prob(mu, sigma, a + da).unwrap() < p || p == 0.0);
        prop_assert!(bm_drift_max_prob(mu - da, sigma, a).unwrap() <= p);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
