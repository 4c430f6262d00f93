//! Eigenvalues of `ψ_xx = (¼ − m/(2λ))ψ` on the periodic grid.
//!
//! With `A = ¼ − D₂` (second-order central differences) and `W = diag(m)` the
//! problem is `Aψ = (2λ)⁻¹Wψ`. For `m ≥ 0` the values `2λ` are the eigenvalues
//! of the symmetric positive semidefinite `W^{1/2} A⁻¹ W^{1/2}`, which needs no
//! division by `m`. `A` is circulant, so `A⁻¹` is applied by FFT.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::{Field, Grid};
use crate::peaks::find_peaks;

/// Negative weights no larger than this fraction of `max|m|` are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-6;
/// Largest grid solved densely.
pub const DENSE_MAX: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("momentum vanishes; there is no spectrum")]
    NoSpectrum,
    #[error("k_max must be between 1 and n")]
    KMax,
    #[error("fewer than {wanted} separated peaks at t = {t} (found {found})")]
    PeaksNotSeparated { t: f64, found: usize, wanted: usize },
    #[error("need at least {0} snapshots")]
    TooFewSnapshots(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumResult {
    /// Largest eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub n_grid: usize,
    /// `m` changed sign beyond the clamp tolerance; eigenvalues are real parts
    /// of a non-symmetric dense solve.
    pub indefinite: bool,
    pub clamped: usize,
    pub m_min: f64,
    pub m_max: f64,
    /// Largest relative residual `‖Bφ − 2λφ‖ / (2λ)` of the returned pairs (symmetric case).
    pub max_residual: f64,
}

/// Symbol of `A = ¼ − D₂` at each FFT index.
fn symbol(grid: &Grid) -> Vec<f64> {
    let n = grid.n();
    let dx = grid.dx();
    (0..n)
        .map(|j| 0.25 + (2.0 - 2.0 * (2.0 * PI * j as f64 / n as f64).cos()) / (dx * dx))
        .collect()
}

struct Operator<'a> {
    grid: &'a Grid,
    sym: Vec<f64>,
    sqrt_m: Vec<f64>,
}

impl Operator<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = x.iter().zip(&self.sqrt_m).map(|(a, b)| a * b).collect();
        let mut spec = self.grid.forward(&y);
        for (c, s) in spec.iter_mut().zip(&self.sym) {
            *c /= *s;
        }
        let z = self.grid.inverse_real(spec);
        z.iter().zip(&self.sqrt_m).map(|(a, b)| a * b).collect()
    }
}

/// Dense `A⁻¹` from its first column.
fn inverse_matrix(grid: &Grid) -> DMatrix<f64> {
    let n = grid.n();
    let spec: Vec<Complex64> = symbol(grid).iter().map(|s| Complex64::new(1.0 / s, 0.0)).collect();
    let col = grid.inverse_real(spec);
    DMatrix::from_fn(n, n, |i, j| col[(i + n - j) % n])
}

pub fn ch_spectrum(m: &Field, k_max: usize) -> Result<SpectrumResult, SpectrumError> {
    spectrum_with(m, k_max, m.grid().n() <= DENSE_MAX)
}

/// Same as [`ch_spectrum`] but always through the dense symmetric solver.
pub fn ch_spectrum_dense(m: &Field, k_max: usize) -> Result<SpectrumResult, SpectrumError> {
    spectrum_with(m, k_max, true)
}

fn spectrum_with(m: &Field, k_max: usize, dense: bool) -> Result<SpectrumResult, SpectrumError> {
    let n = m.grid().n();
    if k_max == 0 || k_max > n {
        return Err(SpectrumError::KMax);
    }
    let vals = m.values();
    let m_max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m_min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = m_max.abs().max(m_min.abs());
    if !(scale > 0.0) {
        return Err(SpectrumError::NoSpectrum);
    }
    let indefinite = m_min < -CLAMP_TOL * scale && m_max > 0.0;
    let sign = if m_max <= 0.0 { -1.0 } else { 1.0 };
    if indefinite {
        return Ok(indefinite_spectrum(m, k_max, m_min, m_max));
    }
    // a non-positive m is handled as −(spectrum of −m)
    let mut clamped = 0;
    let weights: Vec<f64> = vals
        .iter()
        .map(|&v| {
            let w = sign * v;
            if w < 0.0 {
                clamped += 1;
                0.0
            } else {
                w
            }
        })
        .collect();
    let op = Operator { grid: m.grid(), sym: symbol(m.grid()), sqrt_m: weights.iter().map(|w| w.sqrt()).collect() };
    let pairs = if dense { dense_pairs(&op, k_max) } else { lanczos_pairs(&op, k_max) };
    let mut max_residual: f64 = 0.0;
    let mut eigenvalues = Vec::with_capacity(k_max);
    for (mu, v) in &pairs {
        let bv = op.apply(v.as_slice());
        let r = bv.iter().zip(v.iter()).map(|(a, b)| (a - mu * b).powi(2)).sum::<f64>().sqrt();
        if *mu > 0.0 {
            max_residual = max_residual.max(r / mu);
        }
        eigenvalues.push(sign * 0.5 * mu);
    }
    if sign < 0.0 {
        eigenvalues.reverse();
    }
    Ok(SpectrumResult { eigenvalues, n_grid: n, indefinite: false, clamped, m_min, m_max, max_residual })
}

fn dense_pairs(op: &Operator, k: usize) -> Vec<(f64, DVector<f64>)> {
    let s = DVector::from_vec(op.sqrt_m.clone());
    let ainv = inverse_matrix(op.grid);
    let b = DMatrix::from_fn(ainv.nrows(), ainv.ncols(), |i, j| s[i] * ainv[(i, j)] * s[j]);
    let eig = SymmetricEigen::new(b);
    top_pairs(&eig, k)
}

fn top_pairs(eig: &SymmetricEigen<f64, nalgebra::Dyn>, k: usize) -> Vec<(f64, DVector<f64>)> {
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    idx.into_iter().take(k).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())).collect()
}

/// Lanczos with full reorthogonalisation, run until the top `k` Ritz pairs
/// have residual below `1e-12` of the leading value.
fn lanczos_pairs(op: &Operator, k: usize) -> Vec<(f64, DVector<f64>)> {
    let n = op.grid.n();
    // generic deterministic start vector so no symmetry class is missed
    let start: Vec<f64> = (0..n)
        .map(|j| op.sqrt_m[j] * (1.0 + 0.5 * ((j as f64 * 0.618_033_988_75).fract() - 0.5)))
        .collect();
    let norm = start.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![(0.0, DVector::zeros(n)); k];
    }
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / norm).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let j = basis.len() - 1;
        let mut w = op.apply(&basis[j]);
        let a: f64 = w.iter().zip(&basis[j]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = w.iter().zip(q).map(|(x, y)| x * y).sum();
                for (x, y) in w.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let b = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let m = alpha.len();
        let done = m == n || b <= 1e-14 * alpha[0].abs().max(1e-300);
        if done || (m >= k + 10 && m.is_multiple_of(10)) {
            let t = DMatrix::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let ritz = top_pairs(&eig, k.min(m));
            let lead = ritz.first().map_or(0.0, |p| p.0.abs());
            let converged = ritz.len() == k && ritz.iter().all(|(_, y)| (b * y[m - 1]).abs() <= 1e-12 * lead);
            if done || converged {
                let mut out: Vec<(f64, DVector<f64>)> = ritz
                    .into_iter()
                    .map(|(mu, y)| {
                        let mut v = DVector::zeros(n);
                        for (i, q) in basis.iter().enumerate() {
                            for (r, qv) in q.iter().enumerate() {
                                v[r] += y[i] * qv;
                            }
                        }
                        (mu, v)
                    })
                    .collect();
                // an invariant subspace smaller than k: remaining eigenvalues are zero
                while out.len() < k {
                    out.push((0.0, DVector::zeros(n)));
                }
                return out;
            }
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
    }
}

fn indefinite_spectrum(m: &Field, k_max: usize, m_min: f64, m_max: f64) -> SpectrumResult {
    let n = m.grid().n();
    let ainv = inverse_matrix(m.grid());
    let b = DMatrix::from_fn(n, n, |i, j| ainv[(i, j)] * m.values()[j]);
    let mut ev: Vec<f64> = b.complex_eigenvalues().iter().map(|c| 0.5 * c.re).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(k_max);
    SpectrumResult {
        eigenvalues: ev,
        n_grid: n,
        indefinite: true,
        clamped: 0,
        m_min,
        m_max,
        max_residual: f64::NAN,
    }
}

/// `max_k |λ_k(t)/λ_k(0) − 1|` for every velocity snapshot.
pub fn isospectral_drift(snapshots: &[Field], k_max: usize) -> Result<Vec<f64>, SpectrumError> {
    let spectra = snapshots
        .par_iter()
        .map(|u| ch_spectrum(&u.helmholtz_apply(), k_max))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(first) = spectra.first() else { return Ok(Vec::new()) };
    Ok(spectra
        .iter()
        .map(|s| {
            s.eigenvalues
                .iter()
                .zip(&first.eigenvalues)
                .map(|(l, l0)| (l / l0 - 1.0).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeakSpeed {
    /// Mean height over the window.
    pub height: f64,
    pub speed: f64,
    /// Position at the end of the window.
    pub position: f64,
}

/// Speeds of the `n_peaks` tallest maxima over the last `window` snapshots,
/// tallest first. Each peak is followed by nearest match with periodic unwrap;
/// the speed is the least-squares slope of position against time.
pub fn emergent_speeds(
    times: &[f64],
    snapshots: &[Field],
    n_peaks: usize,
    window: usize,
) -> Result<Vec<PeakSpeed>, SpectrumError> {
    if window < 2 || snapshots.len() < window {
        return Err(SpectrumError::TooFewSnapshots(window.max(2)));
    }
    let start = snapshots.len() - window;
    let detect = |i: usize| {
        let u = &snapshots[i];
        let sup = u.sup_norm();
        let peaks = find_peaks(u, 0.05 * sup, 0.05 * sup, 5.0 * u.grid().dx());
        if peaks.len() < n_peaks {
            Err(SpectrumError::PeaksNotSeparated { t: times[i], found: peaks.len(), wanted: n_peaks })
        } else {
            Ok(peaks)
        }
    };
    let first = detect(start)?;
    let mut tracks: Vec<(Vec<f64>, Vec<f64>)> =
        first.iter().take(n_peaks).map(|p| (vec![p.x], vec![p.height])).collect();
    for i in start + 1..snapshots.len() {
        let grid = snapshots[i].grid();
        let peaks = detect(i)?;
        for (xs, hs) in &mut tracks {
            let last = *xs.last().unwrap_or(&0.0);
            let nearest = peaks
                .iter()
                .min_by(|a, b| {
                    grid.periodic_delta(a.x, last).abs().total_cmp(&grid.periodic_delta(b.x, last).abs())
                })
                .ok_or(SpectrumError::PeaksNotSeparated { t: times[i], found: 0, wanted: n_peaks })?;
            xs.push(last + grid.periodic_delta(nearest.x, last));
            hs.push(nearest.height);
        }
    }
    let ts = &times[start..];
    let tm = ts.iter().sum::<f64>() / ts.len() as f64;
    let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let mut out: Vec<PeakSpeed> = tracks
        .iter()
        .map(|(xs, hs)| {
            let xm = xs.iter().sum::<f64>() / xs.len() as f64;
            let sxt: f64 = ts.iter().zip(xs).map(|(t, x)| (t - tm) * (x - xm)).sum();
            PeakSpeed {
                height: hs.iter().sum::<f64>() / hs.len() as f64,
                speed: sxt / stt,
                position: snapshots[snapshots.len() - 1].grid().wrap(*xs.last().unwrap_or(&0.0)),
            }
        })
        .collect();
    out.sort_by(|a, b| b.height.total_cmp(&a.height));
    Ok(out)
}
