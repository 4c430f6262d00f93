//! Peakon wave trains `u(x) = ½ Σ p_b e^{−|x − q_b|}` on the line and their
//! canonical (stochastic) Hamiltonian dynamics.

use std::io::Write;

use thiserror::Error;

use crate::field::{fmt_f64, Field, FieldError, Grid};
use crate::integrate::{heun_step, rk4_step};
use crate::noise::NoiseMode;
use crate::rng::{BrownianIncrements, RngError};

#[derive(Debug, Error)]
pub enum PeakonError {
    #[error("a peakon state needs at least one peakon")]
    Empty,
    #[error("positions and momenta differ in length ({q} vs {p})")]
    LengthMismatch { q: usize, p: usize },
    #[error("non-finite peakon state")]
    NonFinite,
    #[error("non-finite state after step {step}; dt is too large")]
    Diverged { step: usize },
    #[error("expected {expected} Brownian increments, got {got}")]
    IncrementCount { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakonState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PeakonState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self, PeakonError> {
        if q.len() != p.len() {
            return Err(PeakonError::LengthMismatch { q: q.len(), p: p.len() });
        }
        if q.is_empty() {
            return Err(PeakonError::Empty);
        }
        if q.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(PeakonError::NonFinite);
        }
        Ok(Self { q, p })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn velocity_at(&self, x: f64) -> f64 {
        0.5 * self.q.iter().zip(&self.p).map(|(q, p)| p * (-(x - q).abs()).exp()).sum::<f64>()
    }

    /// `¼ Σ_a Σ_b p_a p_b e^{−|q_a − q_b|}`, self-terms included.
    pub fn hamiltonian(&self) -> f64 {
        let mut h = 0.0;
        for a in 0..self.len() {
            for b in 0..self.len() {
                h += self.p[a] * self.p[b] * (-(self.q[a] - self.q[b]).abs()).exp();
            }
        }
        0.25 * h
    }

    pub fn total_momentum(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `[q..., p...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    fn from_flat(flat: &[f64]) -> Self {
        let m = flat.len() / 2;
        Self { q: flat[..m].to_vec(), p: flat[m..].to_vec() }
    }

    /// The same train on a periodic grid, using the periodic Green's function
    /// `cosh(|x − q|_per − L/2) / (2 sinh(L/2))` so the sampled profile is an
    /// exact periodic peakon sum.
    pub fn to_field(&self, grid: &Grid) -> Result<Field, PeakonError> {
        let half = 0.5 * grid.length();
        let norm = 1.0 / (2.0 * half.sinh());
        let f = Field::from_fn(grid, |x| {
            self.q
                .iter()
                .zip(&self.p)
                .map(|(&q, &p)| p * ((grid.periodic_delta(x, q).abs() - half).cosh() * norm))
                .sum()
        })?;
        Ok(f)
    }
}

/// Canonical drift: `dq_a = u(q_a)`, `dp_a = ½ p_a Σ_b p_b sgn(q_a − q_b) e^{−|q_a − q_b|}`,
/// with `sgn(0) = 0` so self-interaction exerts no force.
pub fn peakon_drift(state: &PeakonState) -> (Vec<f64>, Vec<f64>) {
    let m = state.len();
    let mut dq = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for a in 0..m {
        let (mut u, mut f) = (0.0, 0.0);
        for b in 0..m {
            let d = state.q[a] - state.q[b];
            let e = (-d.abs()).exp();
            u += state.p[b] * e;
            f += state.p[b] * sgn(d) * e;
        }
        dq[a] = 0.5 * u;
        dp[a] = 0.5 * state.p[a] * f;
    }
    (dq, dp)
}

fn flat_drift(flat: &[f64]) -> Vec<f64> {
    let (dq, dp) = peakon_drift(&PeakonState::from_flat(flat));
    dq.into_iter().chain(dp).collect()
}

/// Noise part of the increment: `dq_a = Σ ξⁱ(q_a) dWⁱ`, `dp_a = −p_a Σ ξⁱ′(q_a) dWⁱ`.
pub fn noise_increment(state: &PeakonState, modes: &[NoiseMode], dw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = state.len();
    let mut dq = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for (mode, &w) in modes.iter().zip(dw) {
        for a in 0..m {
            let [xi, xi_x, _, _] = mode.eval_line(state.q[a]);
            dq[a] += xi * w;
            dp[a] -= state.p[a] * xi_x * w;
        }
    }
    (dq, dp)
}

fn checked(flat: Vec<f64>, step: usize) -> Result<PeakonState, PeakonError> {
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(PeakonError::Diverged { step });
    }
    Ok(PeakonState::from_flat(&flat))
}

pub fn step_deterministic(state: &PeakonState, dt: f64) -> Result<PeakonState, PeakonError> {
    if !(dt > 0.0) {
        return Err(PeakonError::TimeStep(dt));
    }
    checked(rk4_step(&state.to_flat(), dt, flat_drift), 0)
}

/// One Stratonovich–Heun step of the canonical SDEs.
pub fn step_stochastic(
    state: &PeakonState,
    dt: f64,
    dw: &[f64],
    modes: &[NoiseMode],
) -> Result<PeakonState, PeakonError> {
    if !(dt > 0.0) {
        return Err(PeakonError::TimeStep(dt));
    }
    if dw.len() != modes.len() {
        return Err(PeakonError::IncrementCount { expected: modes.len(), got: dw.len() });
    }
    let next = heun_step(&state.to_flat(), |x| {
        let s = PeakonState::from_flat(x);
        let (dq, dp) = peakon_drift(&s);
        let (nq, np) = noise_increment(&s, modes, dw);
        dq.iter()
            .zip(&nq)
            .map(|(d, n)| d * dt + n)
            .chain(dp.iter().zip(&np).map(|(d, n)| d * dt + n))
            .collect()
    });
    checked(next, 0)
}

#[derive(Clone, Debug)]
pub struct PeakonTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<PeakonState>,
}

impl PeakonTrajectory {
    /// CSV with columns `t, q1..qM, p1..pM, h`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.states.first().map_or(0, PeakonState::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|a| format!("q{a}")));
        header.extend((1..=m).map(|a| format!("p{a}")));
        header.push("h".into());
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(s.to_flat().into_iter().map(fmt_f64));
            row.push(fmt_f64(s.hamiltonian()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates to `t_final`, RK4 without noise modes and Heun otherwise.
pub fn simulate_peakons(
    initial: &PeakonState,
    dt: f64,
    t_final: f64,
    output_stride: usize,
    modes: &[NoiseMode],
    seed: u64,
    path: u64,
) -> Result<PeakonTrajectory, PeakonError> {
    if !(dt > 0.0) {
        return Err(PeakonError::TimeStep(dt));
    }
    let stride = output_stride.max(1);
    let n_steps = (t_final / dt).round() as usize;
    let mut inc = BrownianIncrements::new(seed, path, modes.len(), dt)?;
    let mut dw = vec![0.0; modes.len()];
    let mut state = initial.clone();
    let mut out = PeakonTrajectory { times: vec![0.0], states: vec![state.clone()] };
    for step in 0..n_steps {
        state = if modes.is_empty() {
            step_deterministic(&state, dt)
        } else {
            inc.fill(step as u64, dt, &mut dw)?;
            step_stochastic(&state, dt, &dw, modes)
        }
        .map_err(|_| PeakonError::Diverged { step })?;
        if (step + 1) % stride == 0 || step + 1 == n_steps {
            out.times.push((step + 1) as f64 * dt);
            out.states.push(state.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(q: &[f64], p: &[f64]) -> PeakonState {
        PeakonState::new(q.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(state(&[0.0], &[2.0]).velocity_at(0.0), 1.0);
        let two = state(&[-1.0, 1.0], &[1.0, 1.0]);
        assert!((two.velocity_at(0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(two.velocity_at(800.0).abs() < 1e-300);
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(state(&[3.0], &[1.5]).hamiltonian(), 0.25 * 1.5 * 1.5);
        let coincident = state(&[0.4, 0.4], &[1.0, 2.0]);
        assert!((coincident.hamiltonian() - 0.25 * 9.0).abs() < 1e-15);
        let far = state(&[0.0, 1e3], &[1.0, 2.0]);
        assert!((far.hamiltonian() - 0.25 * 5.0).abs() < 1e-15);
    }

    #[test]
    fn single_peakon_moves_at_its_height() {
        let (dq, dp) = peakon_drift(&state(&[0.3], &[1.4]));
        assert_eq!(dq, vec![0.7]);
        assert_eq!(dp, vec![0.0]);
    }

    #[test]
    fn mirror_state_has_antisymmetric_drift() {
        let (dq, dp) = peakon_drift(&state(&[-0.8, 0.8], &[1.3, -1.3]));
        assert!((dq[0] + dq[1]).abs() < 1e-15);
        assert!((dp[0] + dp[1]).abs() < 1e-15);
    }

    #[test]
    fn drift_is_the_canonical_gradient() {
        let s = state(&[-0.7, 0.45, 2.0], &[1.2, -0.4, 0.9]);
        let (dq, dp) = peakon_drift(&s);
        let h = 1e-6;
        for a in 0..3 {
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus.p[a] += h;
            minus.p[a] -= h;
            let dh_dp = (plus.hamiltonian() - minus.hamiltonian()) / (2.0 * h);
            assert!((dq[a] - dh_dp).abs() < 1e-8);
            let mut plus = s.clone();
            let mut minus = s.clone();
            plus.q[a] += h;
            minus.q[a] -= h;
            let dh_dq = (plus.hamiltonian() - minus.hamiltonian()) / (2.0 * h);
            assert!((dp[a] + dh_dq).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_increment_is_a_deterministic_heun_step() {
        let s = state(&[-1.0, 1.0], &[1.0, 0.5]);
        let modes = [NoiseMode::Constant { c: 1.0 }];
        let a = step_stochastic(&s, 0.01, &[0.0], &modes).unwrap();
        let b = heun_step(&s.to_flat(), |x| flat_drift(x).iter().map(|d| d * 0.01).collect());
        assert_eq!(a.to_flat(), b);
    }

    #[test]
    fn constant_noise_is_a_rigid_translation() {
        let s = state(&[-1.0, 1.5], &[1.0, 0.5]);
        let modes = [NoiseMode::Constant { c: 0.3 }, NoiseMode::Constant { c: -0.2 }];
        let (dq, dp) = noise_increment(&s, &modes, &[0.7, 0.4]);
        let shift = 0.3 * 0.7 - 0.2 * 0.4;
        assert!(dq.iter().all(|d| (d - shift).abs() < 1e-15));
        assert!(dp.iter().all(|&d| d == 0.0));
        let moved = state(&[s.q[0] + shift, s.q[1] + shift], &s.p);
        assert!((moved.hamiltonian() - s.hamiltonian()).abs() < 1e-15);
    }

    #[test]
    fn periodic_sampling_matches_line_kernel_away_from_wrap() {
        let g = Grid::new(512, 60.0).unwrap();
        let s = state(&[30.0], &[2.0]);
        let f = s.to_field(&g).unwrap();
        for j in (0..512).step_by(37) {
            assert!((f.values()[j] - s.velocity_at(g.x(j))).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_states_are_rejected() {
        assert!(matches!(PeakonState::new(vec![], vec![]), Err(PeakonError::Empty)));
        assert!(PeakonState::new(vec![0.0], vec![f64::NAN]).is_err());
        assert!(PeakonState::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
