//! Reduced stochastic slope dynamics at the inflection point: the Itô slope
//! equation, the lower comparison SDE, the Riccati bound on the mean slope,
//! the maximum of a Brownian motion with negative drift, and Monte-Carlo
//! breaking statistics.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::fmt_f64;
use crate::integrate::{euler_maruyama_step, heun_step};
use crate::rng::{BrownianIncrements, RngError};
use crate::steepening::acoth;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Paths per deterministic aggregation block.
const BLOCK: usize = 256;

#[derive(Debug, Error)]
pub enum SlopeError {
    #[error("invalid slope parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error(transparent)]
    Rng(#[from] RngError),
}

/// Which reduced equation a Monte-Carlo path follows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeModel {
    /// `ds̃ = −(½s̃² − ½‖ξ‖²s̃ + M)dt + ‖ξ‖s̃∘dW`, Heun.
    #[default]
    Comparison,
    /// The Itô slope equation with `u²(ν) − K∗(…)(ν)` replaced by its bound `M`,
    /// Euler–Maruyama.
    ItoBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SlopeSDEParams {
    pub s0: f64,
    pub m: f64,
    pub xi_norm: f64,
    pub eps: f64,
    pub dt: f64,
    pub t_final: f64,
    pub threshold: f64,
}

impl SlopeSDEParams {
    pub fn validate(&self) -> Result<(), SlopeError> {
        let mut errs = Vec::new();
        if !(self.s0 < 0.0) {
            errs.push(format!("s0 must be negative (got {})", self.s0));
        }
        if !(self.m >= 0.0) {
            errs.push(format!("m must be non-negative (got {})", self.m));
        }
        if !(self.xi_norm >= 0.0) {
            errs.push(format!("xi_norm must be non-negative (got {})", self.xi_norm));
        }
        if !(self.eps > 0.0 && self.eps < 1.0 / 3.0) {
            errs.push(format!("eps must lie in (0, 1/3) (got {})", self.eps));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            errs.push(format!("t_final must be positive (got {})", self.t_final));
        }
        if !(self.threshold <= 10.0 * self.s0) {
            errs.push(format!("threshold must be at most 10*s0 = {} (got {})", 10.0 * self.s0, self.threshold));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SlopeError::Invalid(errs))
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// `(a, b) = ((1 − ε)/2, M + ‖ξ‖²/(2ε))` of the mean-slope Riccati bound.
    pub fn riccati_coefficients(&self) -> (f64, f64) {
        (0.5 * (1.0 - self.eps), self.m + self.xi_norm * self.xi_norm / (2.0 * self.eps))
    }
}

/// One Euler–Maruyama step of the Itô slope equation
/// `ds = [−½s² + u² − K∗(u² + ½u_x²) + ½‖ξ‖²s]dt − ‖ξ‖s dW`.
pub fn ito_slope_step(s: f64, u_at_nu: f64, kconv_at_nu: f64, xi_norm: f64, dt: f64, dw: f64) -> f64 {
    euler_maruyama_step(&[s], |x| {
        let s = x[0];
        let drift = -0.5 * s * s + u_at_nu * u_at_nu - kconv_at_nu + 0.5 * xi_norm * xi_norm * s;
        vec![drift * dt - xi_norm * s * dw]
    })[0]
}

/// Stratonovich drift of the comparison SDE.
pub fn comparison_drift(s: f64, m: f64, xi_norm: f64) -> f64 {
    -(0.5 * s * s - 0.5 * xi_norm * xi_norm * s + m)
}

/// One Heun step of the comparison SDE.
pub fn comparison_step(s: f64, m: f64, xi_norm: f64, dt: f64, dw: f64) -> f64 {
    heun_step(&[s], |x| vec![comparison_drift(x[0], m, xi_norm) * dt + xi_norm * x[0] * dw])[0]
}

fn model_step(model: SlopeModel, p: &SlopeSDEParams, s: f64, dw: f64) -> f64 {
    match model {
        SlopeModel::Comparison => comparison_step(s, p.m, p.xi_norm, p.dt, dw),
        SlopeModel::ItoBound => ito_slope_step(s, p.m.sqrt(), 0.0, p.xi_norm, p.dt, dw),
    }
}

/// A sampled slope path. After breaking the path is frozen at the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopePath {
    /// Values at steps `0, stride, 2·stride, …` (and the final step).
    pub values: Vec<f64>,
    pub breaking_time: Option<f64>,
}

/// Runs one path on the stream `(seed, path)`; breaks at the first step whose
/// value is at or below the threshold or non-finite.
pub fn sample_path(
    model: SlopeModel,
    params: &SlopeSDEParams,
    seed: u64,
    path: u64,
    record_stride: usize,
) -> Result<SlopePath, SlopeError> {
    params.validate()?;
    let stride = record_stride.max(1);
    let n = params.n_steps();
    let mut inc = BrownianIncrements::new(seed, path, 1, params.dt)?;
    let mut s = params.s0;
    let mut values = vec![s];
    let mut breaking_time = None;
    for step in 0..n {
        if breaking_time.is_none() {
            let dw = inc.next_scalar(step as u64, params.dt)?;
            s = model_step(model, params, s, dw);
            if !(s > params.threshold) {
                s = params.threshold;
                breaking_time = Some((step + 1) as f64 * params.dt);
            }
        }
        if (step + 1) % stride == 0 || step + 1 == n {
            values.push(s);
        }
    }
    Ok(SlopePath { values, breaking_time })
}

pub fn comparison_sde_path(params: &SlopeSDEParams, seed: u64, path: u64, record_stride: usize) -> Result<SlopePath, SlopeError> {
    sample_path(SlopeModel::Comparison, params, seed, path, record_stride)
}

/// Upper bound on `E[s_t]`: `√(b/a)·coth(σ̂ + t√(ab))`, `σ̂ = coth⁻¹(s0√(a/b))`,
/// `−∞` from [`riccati_blowup_time`] on.
pub fn riccati_mean_bound(params: &SlopeSDEParams, t: f64) -> Result<f64, SlopeError> {
    let tb = riccati_blowup_time(params)?;
    if t >= tb {
        return Ok(f64::NEG_INFINITY);
    }
    if t == 0.0 {
        return Ok(params.s0);
    }
    let (a, b) = params.riccati_coefficients();
    if b == 0.0 {
        return Ok(params.s0 / (1.0 + a * params.s0 * t));
    }
    let arg = acoth(params.s0 * (a / b).sqrt()) + t * (a * b).sqrt();
    Ok((b / a).sqrt() / arg.tanh())
}

/// Blow-up time `−σ̂/√(ab)` of the mean bound (`−1/(a·s0)` when `b = 0`).
pub fn riccati_blowup_time(params: &SlopeSDEParams) -> Result<f64, SlopeError> {
    let (a, b) = params.riccati_coefficients();
    if !(a > 0.0 && b >= 0.0 && params.s0 < -(b / a).sqrt()) {
        return Err(SlopeError::PreconditionFailed(format!(
            "mean bound needs s0 < -sqrt(b/a) = {} (s0 = {})",
            -(b / a).sqrt(),
            params.s0
        )));
    }
    if b == 0.0 {
        return Ok(-1.0 / (a * params.s0));
    }
    Ok(-acoth(params.s0 * (a / b).sqrt()) / (a * b).sqrt())
}

/// `P(max_t σB_t + μt ≥ a) = exp(−2|μ|a/σ²)` for `μ < 0`.
pub fn bm_drift_max_prob(mu: f64, sigma: f64, a: f64) -> Result<f64, SlopeError> {
    if !(mu < 0.0 && sigma > 0.0 && a >= 0.0) {
        return Err(SlopeError::PreconditionFailed(format!(
            "needs mu < 0, sigma > 0, a >= 0 (got mu = {mu}, sigma = {sigma}, a = {a})"
        )));
    }
    Ok((-2.0 * mu.abs() * a / (sigma * sigma)).exp())
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Monte-Carlo estimate of `P(max_t σB_t + μt ≥ a)`.
///
/// Paths are sampled on a grid of step `dt`; between grid points the path is a
/// Brownian bridge, whose exceedance probability
/// `exp(−2(a − x_i)(a − x_{i+1})/(σ²dt))` is exact, so the per-path value
/// `1 − Π(1 − p_i)` is an unbiased conditional estimate for any `dt`.
/// A path stops at `t_max`, or earlier once `exp(−2|μ|(a − x)/σ²)` (Ville's
/// bound on any later exceedance) drops below `tol`.
#[allow(clippy::too_many_arguments)]
pub fn bm_drift_max_mc(
    mu: f64,
    sigma: f64,
    a: f64,
    n_paths: usize,
    dt: f64,
    t_max: f64,
    tol: f64,
    seed: u64,
) -> Result<Estimate, SlopeError> {
    bm_drift_max_prob(mu, sigma, a)?;
    let n_steps = (t_max / dt).round() as u64;
    let s2dt = sigma * sigma * dt;
    let one_path = |path: u64| -> Result<f64, SlopeError> {
        let mut inc = BrownianIncrements::new(seed, path, 1, dt)?;
        let mut x = 0.0;
        if x >= a {
            return Ok(1.0);
        }
        let mut miss = 1.0;
        for step in 0..n_steps {
            let next = x + mu * dt + sigma * inc.next_scalar(step, dt)?;
            if next >= a {
                return Ok(1.0);
            }
            miss *= 1.0 - (-2.0 * (a - x) * (a - next) / s2dt).exp();
            x = next;
            if (-2.0 * mu.abs() * (a - x) / (sigma * sigma)).exp() < tol {
                break;
            }
        }
        Ok(1.0 - miss)
    };
    let vals = (0..n_paths as u64).into_par_iter().map(one_path).collect::<Result<Vec<_>, _>>()?;
    Ok(estimate(&vals))
}

fn estimate(vals: &[f64]) -> Estimate {
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    Estimate { mean, std_err: (var / n as f64).sqrt(), n }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathOutcome {
    pub path: u64,
    pub seed: u64,
    pub broken: bool,
    pub breaking_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub model: SlopeModel,
    pub params: SlopeSDEParams,
    pub master_seed: u64,
    pub n_paths: usize,
    pub n_broken: usize,
    pub p_hat: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub times: Vec<f64>,
    /// Mean slope over all paths, broken paths held at the threshold.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub paths: Vec<PathOutcome>,
}

impl EnsembleSummary {
    pub fn write_paths_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,seed,broken,breaking_time")?;
        for p in &self.paths {
            writeln!(
                w,
                "{},{},{},{}",
                p.path,
                p.seed,
                u8::from(p.broken),
                p.breaking_time.map(fmt_f64).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    pub fn write_mean_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mean,std_err")?;
        for ((t, m), e) in self.times.iter().zip(&self.mean).zip(&self.std_err) {
            writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*m), fmt_f64(*e))?;
        }
        Ok(())
    }
}

struct Block {
    outcomes: Vec<PathOutcome>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Runs `n_paths` independent paths on streams `(master_seed, 0..n_paths)`.
/// Paths are summed in fixed blocks combined in block order, so the result is
/// identical for any thread count.
pub fn mc_breaking_probability(
    model: SlopeModel,
    params: &SlopeSDEParams,
    n_paths: usize,
    master_seed: u64,
    record_stride: usize,
) -> Result<EnsembleSummary, SlopeError> {
    params.validate()?;
    if n_paths < 100 {
        return Err(SlopeError::Invalid(vec![format!("mc.n_paths must be at least 100 (got {n_paths})")]));
    }
    let stride = record_stride.max(1);
    let n_steps = params.n_steps();
    let mut times: Vec<f64> = (0..=n_steps).step_by(stride).map(|k| k as f64 * params.dt).collect();
    if !n_steps.is_multiple_of(stride) {
        times.push(n_steps as f64 * params.dt);
    }
    let n_rec = times.len();

    let blocks: Vec<Block> = (0..n_paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| -> Result<Block, SlopeError> {
            let mut block = Block { outcomes: Vec::new(), sum: vec![0.0; n_rec], sum_sq: vec![0.0; n_rec] };
            for path in (b * BLOCK)..((b + 1) * BLOCK).min(n_paths) {
                let sp = sample_path(model, params, master_seed, path as u64, stride)?;
                for (k, v) in sp.values.iter().enumerate() {
                    block.sum[k] += v;
                    block.sum_sq[k] += v * v;
                }
                block.outcomes.push(PathOutcome {
                    path: path as u64,
                    seed: master_seed,
                    broken: sp.breaking_time.is_some(),
                    breaking_time: sp.breaking_time,
                });
            }
            Ok(block)
        })
        .collect::<Result<_, _>>()?;

    let mut sum = vec![0.0; n_rec];
    let mut sum_sq = vec![0.0; n_rec];
    let mut paths = Vec::with_capacity(n_paths);
    for b in blocks {
        for k in 0..n_rec {
            sum[k] += b.sum[k];
            sum_sq[k] += b.sum_sq[k];
        }
        paths.extend(b.outcomes);
    }
    let nf = n_paths as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt())
        .collect();
    let n_broken = paths.iter().filter(|p| p.broken).count();
    let (wilson_low, wilson_high) = wilson_interval(n_broken, n_paths, Z95);
    Ok(EnsembleSummary {
        model,
        params: *params,
        master_seed,
        n_paths,
        n_broken,
        p_hat: n_broken as f64 / nf,
        wilson_low,
        wilson_high,
        times,
        mean,
        std_err,
        paths,
    })
}
