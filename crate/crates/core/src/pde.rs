//! Deterministic and stochastic Camassa–Holm evolution in advective form:
//!
//! ```text
//! du + u·u_x dt = −∂x K∗(u² + ½u_x²) dt − Σᵢ Aⁱ(u)∘dWⁱ
//! Aⁱ(u)        = u_x ξⁱ + K∗(u_x ξⁱ_xx + 2u ξⁱ_x)
//! ```
//!
//! `K∗` is the Helmholtz inverse on the periodic grid. All quadratic products
//! are formed from the 2/3-truncated state and truncated again, so the
//! semi-discrete drift conserves `h` exactly.

use std::cell::RefCell;
use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::field::{fmt_f64, sup_abs, Field, FieldError, Grid};
use crate::integrate::{heun_step_with_flow, rk4_step};
use crate::noise::{ModeProfile, NoiseBasis};
use crate::rng::{BrownianIncrements, RngError};

/// Courant number in `dt ≤ CFL·dx / max(1, sup|u|)`.
pub const CFL: f64 = 0.5;
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e3;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("dt = {dt} violates the advective CFL bound; use dt <= {suggested}")]
    Cfl { dt: f64, suggested: f64 },
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("expected {expected} Brownian increments, got {got}")]
    IncrementCount { expected: usize, got: usize },
    #[error("invalid simulation config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Rng(#[from] RngError),
}

/// Largest admissible step for the state `u`.
pub fn cfl_limit(grid: &Grid, u: &[f64]) -> f64 {
    CFL * grid.dx() / sup_abs(u).max(1.0)
}

/// Reusable buffers for the nonlocal operators on one grid.
#[derive(Clone, Debug)]
pub struct ChOperator {
    grid: Grid,
    spec: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl ChOperator {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n();
        Self {
            grid: grid.clone(),
            spec: vec![Complex64::default(); n],
            work: vec![Complex64::default(); n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Dealiased `u` and spectral `u_x` from one forward and one inverse transform.
    fn projected_with_slope(&mut self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.n();
        let keep = self.grid.dealias_mask();
        let ks = self.grid.wavenumbers();
        for (c, &v) in self.spec.iter_mut().zip(u) {
            *c = Complex64::new(v, 0.0);
        }
        self.grid.fft_in_place(&mut self.spec);
        for j in 0..n {
            if keep[j] {
                let c = self.spec[j];
                // packs two real signals: re = u, im = u_x
                self.work[j] = c + Complex64::i() * (Complex64::i() * ks[j] * c);
            } else {
                self.work[j] = Complex64::default();
            }
        }
        self.grid.ifft_in_place(&mut self.work);
        let scale = 1.0 / n as f64;
        let up = self.work.iter().map(|c| c.re * scale).collect();
        let ux = self.work.iter().map(|c| c.im * scale).collect();
        (up, ux)
    }

    /// Transforms two real signals `a`, `b` at once; returns their spectra.
    fn forward_pair(&mut self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.grid.n();
        for j in 0..n {
            self.spec[j] = Complex64::new(a[j], b[j]);
        }
        self.grid.fft_in_place(&mut self.spec);
        let mut fa = vec![Complex64::default(); n];
        let mut fb = vec![Complex64::default(); n];
        for j in 0..n {
            let z = self.spec[j];
            let zc = self.spec[(n - j) % n].conj();
            fa[j] = 0.5 * (z + zc);
            fb[j] = Complex64::new(0.0, -0.5) * (z - zc);
        }
        (fa, fb)
    }

    fn inverse_masked(&mut self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let keep = self.grid.dealias_mask();
        for (c, &k) in spec.iter_mut().zip(keep) {
            if !k {
                *c = Complex64::default();
            }
        }
        self.grid.inverse_real(spec)
    }

    /// Drift `−u·u_x − ∂x K∗(u² + ½u_x²)`.
    pub fn drift(&mut self, u: &[f64]) -> Vec<f64> {
        let (up, ux) = self.projected_with_slope(u);
        let u2: Vec<f64> = up.iter().map(|v| v * v).collect();
        let ux2: Vec<f64> = ux.iter().map(|v| v * v).collect();
        let (w1, w2) = self.forward_pair(&u2, &ux2);
        let ks = self.grid.wavenumbers();
        let nyq = self.grid.n() / 2;
        let rhs: Vec<Complex64> = (0..self.grid.n())
            .map(|j| {
                if j == nyq {
                    return Complex64::default();
                }
                let ik = Complex64::new(0.0, ks[j]);
                let k2 = ks[j] * ks[j];
                // −u u_x = −½(u²)_x
                -0.5 * ik * w1[j] - ik / (1.0 + k2) * (w1[j] + 0.5 * w2[j])
            })
            .collect();
        self.inverse_masked(rhs)
    }

    /// `Aⁱ(u) = u_x ξ + K∗(u_x ξ_xx + 2u ξ_x)`; exactly `c·u_x` for a constant mode.
    pub fn noise_a(&mut self, u: &[f64], mode: &ModeProfile) -> Vec<f64> {
        let (up, ux) = self.projected_with_slope(u);
        if let Some(c) = mode.constant_value() {
            return ux.iter().map(|d| c * d).collect();
        }
        let transport: Vec<f64> = ux.iter().zip(&mode.xi).map(|(d, x)| d * x).collect();
        let source: Vec<f64> = (0..up.len())
            .map(|j| ux[j] * mode.xi_xx[j] + 2.0 * up[j] * mode.xi_x[j])
            .collect();
        let (ft, fs) = self.forward_pair(&transport, &source);
        let ks = self.grid.wavenumbers();
        let out: Vec<Complex64> =
            (0..ks.len()).map(|j| ft[j] + fs[j] / (1.0 + ks[j] * ks[j])).collect();
        self.inverse_masked(out)
    }

    /// `Bⁱ(u) = ∂x K∗(u_x ξ_xx + 2u ξ_x)`, evaluated through the identity
    /// `−u ξ_xx + K∗(u ξ_xx) − ∂x K∗(u ξ_xxx − 2u ξ_x)`. Zero for constant modes.
    pub fn noise_b(&mut self, u: &[f64], mode: &ModeProfile) -> Vec<f64> {
        let n = self.grid.n();
        if mode.constant_value().is_some() {
            return vec![0.0; n];
        }
        let (up, _) = self.projected_with_slope(u);
        let local: Vec<f64> = (0..n).map(|j| up[j] * mode.xi_xx[j]).collect();
        let flux: Vec<f64> = (0..n).map(|j| up[j] * (mode.xi_xxx[j] - 2.0 * mode.xi_x[j])).collect();
        let (fl, ff) = self.forward_pair(&local, &flux);
        let ks = self.grid.wavenumbers();
        let nyq = n / 2;
        let out: Vec<Complex64> = (0..n)
            .map(|j| {
                let k = if j == nyq { 0.0 } else { ks[j] };
                let kinv = 1.0 / (1.0 + ks[j] * ks[j]);
                -fl[j] + fl[j] * kinv - Complex64::new(0.0, k) * kinv * ff[j]
            })
            .collect();
        self.inverse_masked(out)
    }

    /// `sup|u_x|` of the dealiased state.
    pub fn sup_slope(&mut self, u: &[f64]) -> f64 {
        let (_, ux) = self.projected_with_slope(u);
        sup_abs(&ux)
    }

    /// Exact translation `u(x) → u(x − delta)` of the resolved modes.
    pub fn translate(&mut self, u: &mut [f64], delta: f64) {
        let n = self.grid.n();
        let ks = self.grid.wavenumbers();
        let keep = self.grid.dealias_mask();
        for (c, &v) in self.spec.iter_mut().zip(u.iter()) {
            *c = Complex64::new(v, 0.0);
        }
        self.grid.fft_in_place(&mut self.spec);
        for j in 0..n {
            self.spec[j] = if keep[j] {
                self.spec[j] * Complex64::from_polar(1.0, -ks[j] * delta)
            } else {
                Complex64::default()
            };
        }
        self.grid.ifft_in_place(&mut self.spec);
        let scale = 1.0 / n as f64;
        for (v, c) in u.iter_mut().zip(&self.spec) {
            *v = c.re * scale;
        }
    }

    /// One classical RK4 step of the deterministic equation (no CFL check).
    pub fn rk4(&mut self, u: &[f64], dt: f64) -> Vec<f64> {
        rk4_step(u, dt, |v| self.drift(v))
    }

    /// One Stratonovich step. Constant modes act as the exact translation by
    /// `Σ cᵢ dWᵢ`; drift and the remaining modes use Heun's predictor–corrector.
    pub fn heun(&mut self, u: &[f64], dt: f64, dw: &[f64], basis: &NoiseBasis) -> Vec<f64> {
        let shift: f64 = basis
            .modes()
            .iter()
            .zip(dw)
            .filter_map(|(m, w)| m.constant_value().map(|c| c * w))
            .sum();
        let varying: Vec<(usize, &ModeProfile)> = basis
            .modes()
            .iter()
            .enumerate()
            .filter(|(i, m)| m.constant_value().is_none() && dw[*i] != 0.0)
            .collect();
        let flow_op = RefCell::new(ChOperator::new(&self.grid));
        heun_step_with_flow(
            u,
            |v| {
                let mut g = self.drift(v);
                for x in g.iter_mut() {
                    *x *= dt;
                }
                for &(i, mode) in &varying {
                    let a = self.noise_a(v, mode);
                    for (x, ai) in g.iter_mut().zip(&a) {
                        *x -= ai * dw[i];
                    }
                }
                g
            },
            |v| {
                if shift != 0.0 {
                    flow_op.borrow_mut().translate(v, shift);
                }
            },
        )
    }
}

fn check_cfl(grid: &Grid, u: &[f64], dt: f64) -> Result<(), PdeError> {
    let suggested = cfl_limit(grid, u);
    if !(dt > 0.0) || dt > suggested {
        return Err(PdeError::Cfl { dt, suggested });
    }
    Ok(())
}

fn finite_field(grid: &Grid, values: Vec<f64>, step: usize) -> Result<Field, PdeError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PdeError::NonFinite { step });
    }
    Ok(Field::new(grid, values)?)
}

/// Drift of the deterministic equation.
pub fn advective_rhs(u: &Field) -> Result<Field, PdeError> {
    let v = ChOperator::new(u.grid()).drift(u.values());
    finite_field(u.grid(), v, 0)
}

pub fn noise_operator_a(u: &Field, mode: &ModeProfile) -> Result<Field, PdeError> {
    let v = ChOperator::new(u.grid()).noise_a(u.values(), mode);
    finite_field(u.grid(), v, 0)
}

pub fn noise_operator_b(u: &Field, mode: &ModeProfile) -> Result<Field, PdeError> {
    let v = ChOperator::new(u.grid()).noise_b(u.values(), mode);
    finite_field(u.grid(), v, 0)
}

/// One RK4 step, refusing steps beyond the CFL bound.
pub fn step_deterministic(u: &Field, dt: f64) -> Result<Field, PdeError> {
    check_cfl(u.grid(), u.values(), dt)?;
    let v = ChOperator::new(u.grid()).rk4(u.values(), dt);
    finite_field(u.grid(), v, 0)
}

/// One Stratonovich step with one increment `dW ~ N(0, dt)` per mode.
pub fn step_stochastic(u: &Field, dt: f64, dw: &[f64], basis: &NoiseBasis) -> Result<Field, PdeError> {
    if dw.len() != basis.len() {
        return Err(PdeError::IncrementCount { expected: basis.len(), got: dw.len() });
    }
    check_cfl(u.grid(), u.values(), dt)?;
    let v = ChOperator::new(u.grid()).heun(u.values(), dt, dw, basis);
    finite_field(u.grid(), v, 0)
}

/// Run parameters for [`simulate`].
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub initial: Field,
    pub basis: NoiseBasis,
    pub dt: f64,
    pub t_final: f64,
    /// Snapshot and diagnostics every `output_stride` steps.
    pub output_stride: usize,
    /// A run ends as broken once `sup|u_x|` exceeds this.
    pub blowup_threshold: f64,
    /// Base step of the Brownian increments (defaults to `dt`). Runs whose
    /// `dt` are power-of-two multiples of a common base share one Brownian path.
    pub noise_base_dt: Option<f64>,
    pub keep_snapshots: bool,
}

impl SimConfig {
    pub fn deterministic(initial: Field, dt: f64, t_final: f64, output_stride: usize) -> Self {
        let basis = NoiseBasis::empty(initial.grid());
        Self {
            initial,
            basis,
            dt,
            t_final,
            output_stride,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            noise_base_dt: None,
            keep_snapshots: true,
        }
    }

    pub fn with_noise(mut self, basis: NoiseBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let mut errs = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push(format!("time.dt must be positive (got {})", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            errs.push(format!("time.t_final must be positive (got {})", self.t_final));
        }
        if self.output_stride == 0 {
            errs.push("time.output_stride must be at least 1".into());
        }
        if !(self.blowup_threshold > 0.0) {
            errs.push(format!("tracking.blowup_threshold must be positive (got {})", self.blowup_threshold));
        }
        if self.basis.grid() != self.initial.grid() {
            errs.push("noise.modes: basis grid differs from the domain grid".into());
        }
        if self.basis.has_exponential() {
            errs.push("noise.modes: exponential modes are not periodic and cannot drive a periodic run".into());
        }
        if let Some(b) = self.noise_base_dt {
            if crate::rng::nesting_ratio(self.dt, b).is_err() {
                errs.push(format!("noise base step {b} does not nest dt = {}", self.dt));
            }
        }
        if self.dt > 0.0 {
            let lim = cfl_limit(self.initial.grid(), self.initial.values());
            if self.dt > lim {
                errs.push(format!("time.dt = {} exceeds the CFL bound {lim}", self.dt));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PdeError::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub hamiltonian: f64,
    pub norm_12: f64,
    pub momentum: f64,
    pub sup_u: f64,
    pub sup_ux: f64,
    pub broken: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlowUpReason {
    NonFinite,
    SlopeThreshold { sup_ux: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlowUp {
    /// Time at which the run was declared broken.
    pub time: f64,
    /// Last time with a finite state.
    pub last_valid_time: f64,
    pub reason: BlowUpReason,
}

/// Output of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub diagnostics: Vec<Diagnostics>,
    /// `increments[mode][step]`, exactly as used.
    pub increments: Vec<Vec<f64>>,
    pub blowup: Option<BlowUp>,
    pub final_time: f64,
    pub final_state: Field,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.final_state.grid()
    }

    pub fn is_broken(&self) -> bool {
        self.blowup.is_some()
    }

    /// `max_t (sup|u|)²` over the recorded diagnostics.
    pub fn steepening_constant(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.sup_u * d.sup_u).fold(0.0, f64::max)
    }

    /// Largest relative deviation of a diagnostic from its initial value.
    pub fn relative_drift(&self, f: impl Fn(&Diagnostics) -> f64) -> f64 {
        let Some(first) = self.diagnostics.first() else { return 0.0 };
        let f0 = f(first);
        let scale = if f0 != 0.0 { f0.abs() } else { 1.0 };
        self.diagnostics.iter().map(|d| (f(d) - f0).abs() / scale).fold(0.0, f64::max)
    }

    /// Diagnostics as CSV: `t,h,norm12,momentum,supu,supux,broken`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,h,norm12,momentum,supu,supux,broken")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(d.t),
                fmt_f64(d.hamiltonian),
                fmt_f64(d.norm_12),
                fmt_f64(d.momentum),
                fmt_f64(d.sup_u),
                fmt_f64(d.sup_ux),
                u8::from(d.broken)
            )?;
        }
        Ok(())
    }
}

enum Increments<'a> {
    Drawn(BrownianIncrements),
    Recorded(&'a [Vec<f64>]),
}

fn diagnostics(op: &mut ChOperator, u: &Field, t: f64, broken: bool) -> Diagnostics {
    Diagnostics {
        t,
        hamiltonian: u.hamiltonian(),
        norm_12: u.norm_12(),
        momentum: u.integral(),
        sup_u: u.sup_norm(),
        sup_ux: op.sup_slope(u.values()),
        broken,
    }
}

/// Runs the configured equation with increments drawn from `(seed, path)`.
/// Without noise modes, or when every mode vanishes identically, this is the
/// deterministic RK4 integration; increments are still drawn and recorded.
pub fn simulate(cfg: &SimConfig, seed: u64, path: u64) -> Result<Trajectory, PdeError> {
    cfg.validate()?;
    let base = cfg.noise_base_dt.unwrap_or(cfg.dt);
    let inc = BrownianIncrements::new(seed, path, cfg.basis.len(), base)?;
    run(cfg, Increments::Drawn(inc))
}

/// Re-runs a configuration with previously recorded increments.
pub fn replay(cfg: &SimConfig, increments: &[Vec<f64>]) -> Result<Trajectory, PdeError> {
    cfg.validate()?;
    if increments.len() != cfg.basis.len() {
        return Err(PdeError::IncrementCount { expected: cfg.basis.len(), got: increments.len() });
    }
    run(cfg, Increments::Recorded(increments))
}

fn run(cfg: &SimConfig, mut source: Increments<'_>) -> Result<Trajectory, PdeError> {
    let grid = cfg.initial.grid().clone();
    let mut op = ChOperator::new(&grid);
    let n_modes = cfg.basis.len();
    let n_steps = cfg.n_steps();
    let stochastic = n_modes > 0;
    // identically vanishing modes leave the equation deterministic
    let noisy = cfg.basis.strength() > 0.0;

    let mut u = cfg.initial.dealiased();
    let mut times = vec![0.0];
    let mut snapshots = Vec::new();
    if cfg.keep_snapshots {
        snapshots.push(u.clone());
    }
    let mut diags = vec![diagnostics(&mut op, &u, 0.0, false)];
    let mut used: Vec<Vec<f64>> = vec![Vec::with_capacity(n_steps); n_modes];
    let mut dw = vec![0.0; n_modes];
    let mut blowup = None;
    let mut t = 0.0;

    for step in 0..n_steps {
        if stochastic {
            match &mut source {
                Increments::Drawn(inc) => inc.fill(step as u64, cfg.dt, &mut dw)?,
                Increments::Recorded(rec) => {
                    for (i, w) in dw.iter_mut().enumerate() {
                        *w = *rec[i].get(step).ok_or(PdeError::IncrementCount {
                            expected: n_steps,
                            got: rec[i].len(),
                        })?;
                    }
                }
            }
            for (store, &w) in used.iter_mut().zip(&dw) {
                store.push(w);
            }
        }
        check_cfl(&grid, u.values(), cfg.dt)?;
        let next = if noisy {
            op.heun(u.values(), cfg.dt, &dw, &cfg.basis)
        } else {
            op.rk4(u.values(), cfg.dt)
        };
        let t_next = (step + 1) as f64 * cfg.dt;
        if next.iter().any(|v| !v.is_finite()) {
            blowup = Some(BlowUp { time: t_next, last_valid_time: t, reason: BlowUpReason::NonFinite });
            break;
        }
        u = Field::new(&grid, next)?;
        t = t_next;
        let sup_ux = op.sup_slope(u.values());
        let broken = sup_ux > cfg.blowup_threshold;
        let last = step + 1 == n_steps;
        if broken || last || (step + 1) % cfg.output_stride == 0 {
            times.push(t);
            if cfg.keep_snapshots {
                snapshots.push(u.clone());
            }
            diags.push(diagnostics(&mut op, &u, t, broken));
        }
        if broken {
            blowup = Some(BlowUp {
                time: t,
                last_valid_time: t,
                reason: BlowUpReason::SlopeThreshold { sup_ux },
            });
            break;
        }
    }
    if !cfg.keep_snapshots {
        snapshots.push(u.clone());
    }
    Ok(Trajectory {
        dt: cfg.dt,
        times,
        snapshots,
        diagnostics: diags,
        increments: used,
        blowup,
        final_time: t,
        final_state: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseMode;
    use std::f64::consts::{PI, TAU};

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn drift_vanishes_on_constants() {
        let g = Grid::new(64, 10.0).unwrap();
        for c in [0.0, 1.7] {
            let r = advective_rhs(&Field::constant(&g, c).unwrap()).unwrap();
            assert!(r.values().iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn constant_mode_reduces_to_transport() {
        let g = Grid::new(64, TAU).unwrap();
        let u = Field::from_fn(&g, |x| x.sin() + 0.2 * (2.0 * x).cos()).unwrap();
        let mode = ModeProfile::new(&g, NoiseMode::Constant { c: 0.7 }).unwrap();
        let a = noise_operator_a(&u, &mode).unwrap();
        let want: Vec<f64> = u.derivative().values().iter().map(|d| 0.7 * d).collect();
        assert!(max_diff(a.values(), &want) < 1e-13);
        let b = noise_operator_b(&u, &mode).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_operators_vanish_on_zero_field() {
        let g = Grid::new(64, TAU).unwrap();
        let xi = Field::from_fn(&g, |x| (-(x - PI).powi(2)).exp()).unwrap();
        let mode = ModeProfile::new(&g, NoiseMode::Sampled(xi)).unwrap();
        let z = Field::zeros(&g);
        assert!(noise_operator_a(&z, &mode).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(noise_operator_b(&z, &mode).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cfl_violation_is_refused_with_suggestion() {
        let g = Grid::new(64, 10.0).unwrap();
        let u = Field::from_fn(&g, |x| 2.0 * (TAU * x / 10.0).sin()).unwrap();
        let lim = cfl_limit(&g, u.values());
        assert!((lim - 0.5 * g.dx() / 2.0).abs() < 1e-12);
        match step_deterministic(&u, 2.0 * lim) {
            Err(PdeError::Cfl { suggested, .. }) => assert!((suggested - lim).abs() < 1e-15),
            other => panic!("expected CFL error, got {other:?}"),
        }
        assert!(step_deterministic(&u, lim).is_ok());
    }

    #[test]
    fn zero_and_constant_states_are_fixed_points() {
        let g = Grid::new(64, 10.0).unwrap();
        let z = Field::zeros(&g);
        let basis = NoiseBasis::new(&g, vec![NoiseMode::Constant { c: 1.0 }]).unwrap();
        assert_eq!(step_deterministic(&z, 0.01).unwrap(), z);
        let s = step_stochastic(&z, 0.01, &[0.3], &basis).unwrap();
        assert!(s.values().iter().all(|v| v.abs() < 1e-15));
        let c = Field::constant(&g, 0.8).unwrap();
        let next = step_deterministic(&c, 0.01).unwrap();
        assert!(max_diff(next.values(), c.values()) < 1e-14);
    }

    #[test]
    fn stochastic_step_without_increments_is_plain_heun() {
        let g = Grid::new(64, TAU).unwrap();
        let u = Field::from_fn(&g, |x| 0.5 * x.cos()).unwrap();
        let basis = NoiseBasis::new(&g, vec![NoiseMode::Constant { c: 1.0 }]).unwrap();
        let dt = 0.01;
        let s = step_stochastic(&u, dt, &[0.0], &basis).unwrap();
        let mut op = ChOperator::new(&g);
        let k1 = op.drift(u.values());
        let pred: Vec<f64> = u.values().iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
        let k2 = op.drift(&pred);
        let heun: Vec<f64> = (0..64).map(|j| u.values()[j] + 0.5 * dt * (k1[j] + k2[j])).collect();
        assert!(max_diff(s.values(), &heun) < 1e-15);
    }

    #[test]
    fn config_errors_name_fields() {
        let g = Grid::new(64, 10.0).unwrap();
        let mut cfg = SimConfig::deterministic(Field::zeros(&g), -1.0, 0.0, 0);
        cfg.basis = NoiseBasis::new(&g, vec![NoiseMode::Exponential { c: 0.0, a: 1.0, b: 0.0 }]).unwrap();
        match cfg.validate() {
            Err(PdeError::Config(errs)) => {
                let all = errs.join("|");
                for key in ["time.dt", "time.t_final", "time.output_stride", "noise.modes"] {
                    assert!(all.contains(key), "{key} missing from {all}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_initial_field_has_zero_diagnostics() {
        let g = Grid::new(32, 10.0).unwrap();
        let cfg = SimConfig::deterministic(Field::zeros(&g), 0.01, 0.1, 2);
        let tr = simulate(&cfg, 0, 0).unwrap();
        for d in &tr.diagnostics {
            assert_eq!((d.hamiltonian, d.norm_12, d.momentum, d.sup_u, d.sup_ux), (0.0, 0.0, 0.0, 0.0, 0.0));
        }
        assert_eq!(tr.times.len(), 6);
    }
}
