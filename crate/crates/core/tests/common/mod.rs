//! Helpers shared by the integration tests. The transforms here are explicit
//! O(n²) sums so they share no code with the FFT paths under test.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Applies a Fourier multiplier `k ↦ (re, im)` by explicit DFT sums.
/// The Nyquist mode is dropped.
pub fn dft_multiplier(v: &[f64], length: f64, mult: impl Fn(f64) -> (f64, f64)) -> Vec<f64> {
    let n = v.len();
    let half = n as i64 / 2;
    let mut out = vec![0.0; n];
    for idx in -half + 1..half {
        let k = 2.0 * PI * idx as f64 / length;
        let (mut a, mut b) = (0.0, 0.0);
        for (j, x) in v.iter().enumerate() {
            let th = 2.0 * PI * (idx * j as i64) as f64 / n as f64;
            a += x * th.cos();
            b -= x * th.sin();
        }
        let (mr, mi) = mult(k);
        let (ca, cb) = (a * mr - b * mi, a * mi + b * mr);
        for (j, o) in out.iter_mut().enumerate() {
            let th = 2.0 * PI * (idx * j as i64) as f64 / n as f64;
            *o += (ca * th.cos() - cb * th.sin()) / n as f64;
        }
    }
    out
}

pub fn d_dx(v: &[f64], length: f64) -> Vec<f64> {
    dft_multiplier(v, length, |k| (0.0, k))
}

/// `K∗v`, the inverse of `1 − ∂x²`.
pub fn kconv(v: &[f64], length: f64) -> Vec<f64> {
    dft_multiplier(v, length, |k| (1.0 / (1.0 + k * k), 0.0))
}

/// `∂x K∗v`.
pub fn dx_kconv(v: &[f64], length: f64) -> Vec<f64> {
    dft_multiplier(v, length, |k| (0.0, k / (1.0 + k * k)))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
