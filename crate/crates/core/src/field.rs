//! Periodic grids, sampled fields and their spectral calculus.
//!
//! All derivatives and the Helmholtz inverse `(1 - d²/dx²)^{-1}` are Fourier
//! multipliers. The inverse is the periodic convolution with
//! `cosh(|x| - L/2) / (2 sinh(L/2))`, the periodic image of `½e^{-|x|}`.
//! Integrals are `mean × L`, which is exact for trigonometric polynomials.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid size {0} must be a power of two and at least 16")]
    GridSize(usize),
    #[error("domain length {0} must be finite and positive")]
    DomainLength(f64),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Spectral {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
    keep: Vec<bool>,
}

/// Uniform periodic grid `x_j = j·dx`, `j = 0..n`, `dx = L/n`.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    length: f64,
    spectral: Arc<Spectral>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("length", &self.length).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length.to_bits() == other.length.to_bits()
    }
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self, FieldError> {
        if n < 16 || !n.is_power_of_two() {
            return Err(FieldError::GridSize(n));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(FieldError::DomainLength(length));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let base = std::f64::consts::TAU / length;
        let mut wavenumbers = Vec::with_capacity(n);
        let mut keep = Vec::with_capacity(n);
        for j in 0..n {
            let idx = signed_index(j, n);
            wavenumbers.push(base * idx as f64);
            // 2/3 rule: products of retained modes alias only onto discarded ones.
            keep.push(3 * idx.unsigned_abs() < n as u64);
        }
        Ok(Self {
            n,
            length,
            spectral: Arc::new(Spectral { forward, inverse, wavenumbers, keep }),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Angular wavenumbers in FFT order; the Nyquist entry carries `-π n / L`.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.spectral.wavenumbers
    }

    /// `true` for modes retained by the 2/3 dealiasing rule.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.spectral.keep
    }

    pub fn is_nyquist(&self, j: usize) -> bool {
        j == self.n / 2
    }

    /// Wraps a position into `[0, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        x.rem_euclid(self.length)
    }

    /// Signed periodic distance `a - b` in `[-L/2, L/2)`.
    pub fn periodic_delta(&self, a: f64, b: f64) -> f64 {
        let l = self.length;
        (a - b + 0.5 * l).rem_euclid(l) - 0.5 * l
    }

    /// Unnormalised forward transform in place.
    pub fn fft_in_place(&self, buf: &mut [Complex64]) {
        self.spectral.forward.process(buf);
    }

    /// Unnormalised inverse transform in place (divide by `n` afterwards).
    pub fn ifft_in_place(&self, buf: &mut [Complex64]) {
        self.spectral.inverse.process(buf);
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_in_place(&mut buf);
        buf
    }

    /// Inverse transform, keeping the real part and normalising by `n`.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.ifft_in_place(&mut spectrum);
        let scale = 1.0 / self.n as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    /// Applies a real multiplier `mult(j, k)` in Fourier space.
    pub fn apply_multiplier(&self, values: &[f64], mult: impl Fn(usize, f64) -> Complex64) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (j, c) in spec.iter_mut().enumerate() {
            *c *= mult(j, self.spectral.wavenumbers[j]);
        }
        self.inverse_real(spec)
    }

    /// Spectral derivative of order `order` of raw samples. Odd orders drop the
    /// Nyquist mode, whose derivative is not real.
    pub fn derivative_of(&self, values: &[f64], order: u32) -> Vec<f64> {
        let nyq = self.n / 2;
        self.apply_multiplier(values, |j, k| {
            if order % 2 == 1 && j == nyq {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k).powu(order)
            }
        })
    }

    /// `(1 - ∂x²)^{-1}` applied to raw samples.
    pub fn helmholtz_inverse_of(&self, values: &[f64]) -> Vec<f64> {
        self.apply_multiplier(values, |_, k| Complex64::new(1.0 / (1.0 + k * k), 0.0))
    }
}

fn signed_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Real samples of a periodic function on a [`Grid`]. Samples are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.n() {
            return Err(FieldError::LengthMismatch { expected: grid.n(), got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FieldError::NonFinite { index, value });
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.n()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self, FieldError> {
        Self::new(grid, vec![c; grid.n()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self, FieldError> {
        Self::new(grid, (0..grid.n()).map(|j| f(grid.x(j))).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn derived(&self, values: Vec<f64>) -> Self {
        // Spectral operators map finite input to finite output.
        Self { grid: self.grid.clone(), values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, FieldError> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Self, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let v = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(&self.grid, v)
    }

    /// Fourier-collocation derivative.
    pub fn derivative(&self) -> Self {
        self.derived(self.grid.derivative_of(&self.values, 1))
    }

    pub fn derivative_n(&self, order: u32) -> Self {
        self.derived(self.grid.derivative_of(&self.values, order))
    }

    /// Solves `(1 - ∂x²) u = self` with the multiplier `1/(1 + k²)`.
    pub fn helmholtz_invert(&self) -> Self {
        self.derived(self.grid.helmholtz_inverse_of(&self.values))
    }

    /// `(1 - ∂x²) self`, i.e. the momentum density of a velocity field.
    pub fn helmholtz_apply(&self) -> Self {
        self.derived(self.grid.apply_multiplier(&self.values, |_, k| Complex64::new(1.0 + k * k, 0.0)))
    }

    /// Projection onto the modes kept by the 2/3 rule.
    pub fn dealiased(&self) -> Self {
        let keep = self.grid.dealias_mask();
        let v = self.grid.apply_multiplier(&self.values, |j, _| {
            Complex64::new(if keep[j] { 1.0 } else { 0.0 }, 0.0)
        });
        self.derived(v)
    }

    /// Translates the profile by `shift`: returns `u(x - shift)` exactly on resolved modes.
    pub fn translated(&self, shift: f64) -> Self {
        let nyq = self.grid.n() / 2;
        let v = self.grid.apply_multiplier(&self.values, |j, k| {
            if j == nyq {
                Complex64::new((k * shift).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, -k * shift)
            }
        });
        self.derived(v)
    }

    /// `∫ f dx` as `mean × L`.
    pub fn integral(&self) -> f64 {
        mean(&self.values) * self.grid.length()
    }

    /// Total momentum `∫ m dx` (call on a momentum density).
    pub fn momentum_total(&self) -> f64 {
        self.integral()
    }

    /// `‖u‖₁,₂ = ∫ u² + ½u_x² dx`.
    pub fn norm_12(&self) -> f64 {
        let ux = self.grid.derivative_of(&self.values, 1);
        let s: f64 = self.values.iter().zip(&ux).map(|(u, d)| u * u + 0.5 * d * d).sum();
        s / self.grid.n() as f64 * self.grid.length()
    }

    /// `h = ½∫ u² + u_x² dx`.
    pub fn hamiltonian(&self) -> f64 {
        let ux = self.grid.derivative_of(&self.values, 1);
        let s: f64 = self.values.iter().zip(&ux).map(|(u, d)| u * u + d * d).sum();
        0.5 * s / self.grid.n() as f64 * self.grid.length()
    }

    pub fn sup_norm(&self) -> f64 {
        sup_abs(&self.values)
    }

    /// `(sup|u|)²`, the constant entering the slope Riccati bounds.
    pub fn steepening_constant(&self) -> f64 {
        let s = self.sup_norm();
        s * s
    }

    /// Band-limited (trigonometric) interpolation at an arbitrary position.
    pub fn interpolate(&self, x: f64) -> f64 {
        let spec = self.grid.forward(&self.values);
        let n = self.grid.n();
        let nyq = n / 2;
        let mut acc = 0.0;
        for (j, c) in spec.iter().enumerate() {
            let k = self.grid.wavenumbers()[j];
            if j == nyq {
                acc += c.re * (k * x).cos();
            } else {
                acc += (c * Complex64::from_polar(1.0, k * x)).re;
            }
        }
        acc / n as f64
    }

    /// Writes `x,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        writeln!(w, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(self.grid.x(j)), fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Reads `x,value` rows. The grid is taken as given; the x column is only
    /// checked for count.
    pub fn read_csv<R: BufRead>(grid: &Grid, r: R) -> Result<Self, FieldError> {
        let mut values = Vec::with_capacity(grid.n());
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let val = line
                .split(',')
                .nth(1)
                .ok_or_else(|| FieldError::Parse { line: i + 1, msg: "expected two columns".into() })?;
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|e| FieldError::Parse { line: i + 1, msg: format!("{e}") })?;
            values.push(v);
        }
        Self::new(grid, values)
    }

    /// Raw little-endian doubles, one per sample.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(grid: &Grid, bytes: &[u8]) -> Result<Self, FieldError> {
        if bytes.len() != 8 * grid.n() {
            return Err(FieldError::LengthMismatch { expected: 8 * grid.n(), got: bytes.len() });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(grid, values)
    }

    pub fn load(grid: &Grid, path: &Path) -> Result<Self, FieldError> {
        let bytes = std::fs::read(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(grid, bytes.as_slice())
        } else {
            Self::from_le_bytes(grid, &bytes)
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Round-trip formatting: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
