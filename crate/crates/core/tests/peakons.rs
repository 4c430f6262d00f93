use chlab::peakon::{peakon_drift, simulate_peakons, step_stochastic, PeakonState};
use chlab::peaks::find_peaks;
use chlab::{Grid, NoiseMode, SimConfig};
use proptest::prelude::*;

fn state(q: &[f64], p: &[f64]) -> PeakonState {
    PeakonState::new(q.to_vec(), p.to_vec()).unwrap()
}

/// Velocities `dq` ordered by position.
fn speeds_by_position(s: &PeakonState) -> Vec<f64> {
    let (dq, _) = peakon_drift(s);
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s.q[a].total_cmp(&s.q[b]));
    idx.into_iter().map(|a| dq[a]).collect()
}

#[test]
fn overtaking_collision_swaps_speeds() {
    let init = state(&[-5.0, 0.0], &[2.0, 1.0]);
    let run = simulate_peakons(&init, 1e-3, 20.0, 1000, &[], 0, 0).unwrap();
    let end = run.states.last().unwrap();
    let before = speeds_by_position(&init);
    let after = speeds_by_position(end);
    assert!(before[0] > before[1], "the trailing peakon starts faster");
    // Both ends sit at finite separation, so each speed is its asymptotic value
    // p/2 up to an O(e^{-d}) interaction; in position order the pair is swapped.
    let asymptotic = [1.0, 0.5];
    for k in 0..2 {
        assert!((before[k] - asymptotic[k]).abs() < 0.02 * asymptotic[k], "{before:?}");
        assert!((after[1 - k] - asymptotic[k]).abs() < 0.02 * asymptotic[k], "{after:?}");
        assert!((after[1 - k] - before[k]).abs() < 0.03 * before[k], "{before:?} {after:?}");
    }
    for s in &run.states {
        assert!((s.total_momentum() - 3.0).abs() < 1e-10);
    }
    // the fast peakon has passed: the tallest one now leads
    let lead = if end.q[0] > end.q[1] { 0 } else { 1 };
    let (dq, _) = peakon_drift(end);
    assert!(dq[lead] > dq[1 - lead]);

    let half = simulate_peakons(&init, 5e-4, 20.0, 2000, &[], 0, 0).unwrap();
    let fine = half.states.last().unwrap();
    for a in 0..2 {
        assert!((fine.q[a] - end.q[a]).abs() < 1e-8);
        assert!((fine.p[a] - end.p[a]).abs() < 1e-8);
    }
}

#[test]
fn deterministic_invariants_hold_for_four_peakons() {
    let init = state(&[-6.0, -2.0, 1.0, 4.0], &[2.0, 1.5, 0.3, 0.8]);
    let run = simulate_peakons(&init, 1e-3, 10.0, 100, &[], 0, 0).unwrap();
    let (h0, p0) = (init.hamiltonian(), init.total_momentum());
    for s in &run.states {
        assert!((s.hamiltonian() - h0).abs() < 1e-8 * h0.abs(), "h {} vs {h0}", s.hamiltonian());
        assert!((s.total_momentum() - p0).abs() < 1e-8 * p0.abs());
    }
}

#[test]
fn constant_noise_leaves_the_hamiltonian_pathwise_invariant() {
    let init = state(&[-3.0, 0.0, 2.5], &[1.5, 1.0, 0.4]);
    let modes = [NoiseMode::Constant { c: 0.6 }, NoiseMode::Constant { c: -0.3 }];
    let h0 = init.hamiltonian();
    for path in 0..5 {
        let run = simulate_peakons(&init, 1e-3, 10.0, 100, &modes, 21, path).unwrap();
        for s in &run.states {
            assert!((s.hamiltonian() - h0).abs() < 1e-8 * h0);
        }
    }
    // a single noise sub-step changes nothing but a common shift
    let s = step_stochastic(&init, 1e-12, &[0.5, 0.25], &modes).unwrap();
    let shift = 0.6 * 0.5 - 0.3 * 0.25;
    for a in 0..3 {
        assert!((s.q[a] - init.q[a] - shift).abs() < 1e-11);
    }
    assert!((s.hamiltonian() - h0).abs() < 1e-14);
}

#[test]
fn exponential_noise_changes_momenta() {
    let init = state(&[-1.0, 1.0], &[1.0, 0.5]);
    let modes = [NoiseMode::Exponential { c: 0.1, a: 0.05, b: 0.0 }];
    let run = simulate_peakons(&init, 1e-3, 1.0, 100, &modes, 2, 0).unwrap();
    let end = run.states.last().unwrap();
    assert!((end.total_momentum() - init.total_momentum()).abs() > 1e-6);
}

#[test]
fn pde_follows_the_peakon_ode() {
    let (n, l) = (4096, 40.0);
    let g = Grid::new(n, l).unwrap();
    let init = state(&[12.0, 17.0], &[2.0, 1.0]);
    let dt = 2e-3;
    let t_final = 2.0;
    let cfg = SimConfig::deterministic(init.to_field(&g).unwrap(), dt, t_final, 250);
    let pde = chlab::simulate(&cfg, 0, 0).unwrap();
    let ode = simulate_peakons(&init, dt, t_final, 250, &[], 0, 0).unwrap();
    assert_eq!(pde.times.len(), ode.times.len());
    for (u, s) in pde.snapshots.iter().zip(&ode.states) {
        let peaks = find_peaks(u, 0.1, 0.1, 0.5);
        assert_eq!(peaks.len(), 2);
        for &q in &s.q {
            let nearest = peaks.iter().map(|p| g.periodic_delta(p.x, q).abs()).fold(f64::MAX, f64::min);
            assert!(nearest <= 2.0 * g.dx(), "peak off by {nearest} (dx = {})", g.dx());
        }
    }
}

proptest! {
    #[test]
    fn drift_conserves_total_momentum(
        q in prop::collection::vec(-10.0f64..10.0, 1..6),
        p in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let s = state(&q, &p[..q.len()]);
        let (_, dp) = peakon_drift(&s);
        prop_assert!(dp.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn dynamics_is_translation_invariant(
        q in prop::collection::vec(-10.0f64..10.0, 1..5),
        p in prop::collection::vec(-3.0f64..3.0, 5),
        shift in -50.0f64..50.0,
    ) {
        let s = state(&q, &p[..q.len()]);
        let moved = state(&q.iter().map(|x| x + shift).collect::<Vec<_>>(), &p[..q.len()]);
        prop_assert!((s.hamiltonian() - moved.hamiltonian()).abs() < 1e-10);
        let (a, b) = (peakon_drift(&s), peakon_drift(&moved));
        for k in 0..q.len() {
            prop_assert!((a.0[k] - b.0[k]).abs() < 1e-10);
            prop_assert!((a.1[k] - b.1[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn velocity_is_bounded_by_half_the_total_mass(
        q in prop::collection::vec(-10.0f64..10.0, 1..5),
        p in prop::collection::vec(-3.0f64..3.0, 5),
        x in -20.0f64..20.0,
    ) {
        let s = state(&q, &p[..q.len()]);
        let bound = 0.5 * p[..q.len()].iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!(s.velocity_at(x).abs() <= bound + 1e-15);
    }
}
