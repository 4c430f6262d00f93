//! Slope at the inflection point to the right of a maximum, and the Riccati
//! envelope `ds/dt ≤ −½s² + M` that forces it to become vertical.

use std::io::Write;

use thiserror::Error;

use crate::field::{fmt_f64, Field};
use crate::pde::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum SteepeningError {
    #[error("no inflection point with negative slope")]
    NoInflection,
    #[error("inflection jumped by {jump} at t = {t}")]
    TrackingLost { t: f64, jump: f64 },
    #[error("envelope requires s0 < -sqrt(2M) (s0 = {s0}, M = {m})")]
    PreconditionFailed { s0: f64, m: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeRecord {
    pub t: f64,
    pub nu: f64,
    pub s: f64,
    pub u_at_nu: f64,
    pub kconv_at_nu: f64,
    /// `coth_envelope(s0, M, t)` when the initial slope satisfies its precondition.
    pub envelope: Option<f64>,
}

/// Inflection of `u` where `u_xx` crosses from negative to positive with
/// `u_x < 0`, i.e. a local minimum of the slope on a descending flank.
///
/// Without a hint this is the first such crossing to the right of the global
/// maximum; with a hint it is the crossing nearest to it. The position is
/// linear in `u_xx` between the bracketing nodes.
pub fn find_inflection(u: &Field, hint: Option<f64>) -> Result<f64, SteepeningError> {
    Ok(locate(u, hint)?.nu)
}

struct Located {
    nu: f64,
    j: usize,
    theta: f64,
}

fn locate(u: &Field, hint: Option<f64>) -> Result<Located, SteepeningError> {
    let g = u.grid();
    let n = g.n();
    let ux = u.derivative();
    let uxx = u.derivative_n(2);
    let (d1, d2) = (ux.values(), uxx.values());

    let crossing = |j: usize| -> Option<Located> {
        let k = (j + 1) % n;
        let (a, b) = (d2[j], d2[k]);
        if !(a < 0.0 && b >= 0.0) {
            return None;
        }
        let theta = a / (a - b);
        let slope = d1[j] + theta * (d1[k] - d1[j]);
        (slope < 0.0).then(|| Located { nu: g.wrap((j as f64 + theta) * g.dx()), j, theta })
    };

    match hint {
        None => {
            let top = (0..n).max_by(|&a, &b| u.values()[a].total_cmp(&u.values()[b])).unwrap_or(0);
            (0..n).find_map(|i| crossing((top + i) % n)).ok_or(SteepeningError::NoInflection)
        }
        Some(h) => (0..n)
            .filter_map(crossing)
            .min_by(|a, b| {
                g.periodic_delta(a.nu, h).abs().total_cmp(&g.periodic_delta(b.nu, h).abs())
            })
            .ok_or(SteepeningError::NoInflection),
    }
}

fn lerp(v: &[f64], j: usize, theta: f64) -> f64 {
    let k = (j + 1) % v.len();
    v[j] + theta * (v[k] - v[j])
}

/// The record for one snapshot.
pub fn slope_record(u: &Field, t: f64, hint: Option<f64>) -> Result<SlopeRecord, SteepeningError> {
    let loc = locate(u, hint)?;
    let ux = u.derivative();
    let source: Vec<f64> =
        u.values().iter().zip(ux.values()).map(|(a, b)| a * a + 0.5 * b * b).collect();
    let kconv = u.grid().helmholtz_inverse_of(&source);
    Ok(SlopeRecord {
        t,
        nu: loc.nu,
        s: lerp(ux.values(), loc.j, loc.theta),
        u_at_nu: lerp(u.values(), loc.j, loc.theta),
        kconv_at_nu: lerp(&kconv, loc.j, loc.theta),
        envelope: None,
    })
}

/// Tracks the inflection through all snapshots by continuity. Stops quietly
/// when the inflection disappears; an empty result means there was none at
/// `t = 0`. Envelopes use `M = max_t (sup|u|)²` of the trajectory.
pub fn track(traj: &Trajectory) -> Result<Vec<SlopeRecord>, SteepeningError> {
    let m = traj.steepening_constant();
    track_snapshots(&traj.times, &traj.snapshots, m)
}

pub fn track_snapshots(times: &[f64], snapshots: &[Field], m: f64) -> Result<Vec<SlopeRecord>, SteepeningError> {
    let mut out: Vec<SlopeRecord> = Vec::new();
    let Some(first) = snapshots.first() else { return Ok(out) };
    let limit = 0.1 * first.grid().length();
    for (&t, u) in times.iter().zip(snapshots) {
        let hint = out.last().map(|r| r.nu);
        let rec = match slope_record(u, t, hint) {
            Ok(r) => r,
            Err(SteepeningError::NoInflection) => break,
            Err(e) => return Err(e),
        };
        if let Some(prev) = hint {
            let jump = u.grid().periodic_delta(rec.nu, prev).abs();
            if jump > limit {
                return Err(SteepeningError::TrackingLost { t, jump });
            }
        }
        out.push(rec);
    }
    if let Some(s0) = out.first().map(|r| r.s) {
        for r in &mut out {
            r.envelope = coth_envelope(s0, m, r.t).ok();
        }
    }
    Ok(out)
}

fn check(s0: f64, m: f64) -> Result<(), SteepeningError> {
    if !(m >= 0.0) || !(s0 < -(2.0 * m).sqrt()) {
        return Err(SteepeningError::PreconditionFailed { s0, m });
    }
    Ok(())
}

/// Solution of `ds/dt = −½s² + M`, `s(0) = s0`:
/// `√(2M)·coth(σ + t√(2M)/2)` with `σ = coth⁻¹(s0/√(2M)) < 0`, or
/// `s0/(1 + s0·t/2)` when `M = 0`. Returns `−∞` from the blow-up time on.
pub fn coth_envelope(s0: f64, m: f64, t: f64) -> Result<f64, SteepeningError> {
    check(s0, m)?;
    if t >= breaking_time_bound(s0, m)? {
        return Ok(f64::NEG_INFINITY);
    }
    if t == 0.0 {
        return Ok(s0);
    }
    if m == 0.0 {
        return Ok(s0 / (1.0 + 0.5 * s0 * t));
    }
    let r = (2.0 * m).sqrt();
    let arg = acoth(s0 / r) + 0.5 * t * r;
    Ok(r / arg.tanh())
}

/// `−2σ/√(2M)`, or `−2/s0` when `M = 0`.
pub fn breaking_time_bound(s0: f64, m: f64) -> Result<f64, SteepeningError> {
    check(s0, m)?;
    if m == 0.0 {
        return Ok(-2.0 / s0);
    }
    let r = (2.0 * m).sqrt();
    Ok(-2.0 * acoth(s0 / r) / r)
}

pub(crate) fn acoth(x: f64) -> f64 {
    0.5 * ((x + 1.0) / (x - 1.0)).ln()
}

/// First time the slope reaches `threshold`, linearly interpolated between records.
pub fn detect_blowup(records: &[SlopeRecord], threshold: f64) -> Option<f64> {
    let i = records.iter().position(|r| r.s <= threshold)?;
    if i == 0 {
        return Some(records[0].t);
    }
    let (a, b) = (&records[i - 1], &records[i]);
    Some(a.t + (threshold - a.s) / (b.s - a.s) * (b.t - a.t))
}

/// Accepts a breaking time only if runs at `dt` and `dt/2` agree within `2·dt`.
pub fn refined_breaking_time(coarse: Option<f64>, fine: Option<f64>, dt: f64) -> Option<f64> {
    match (coarse, fine) {
        (Some(a), Some(b)) if (a - b).abs() <= 2.0 * dt => Some(b),
        _ => None,
    }
}

/// CSV with columns `t,nu,s,u_at_nu,kconv_at_nu,envelope` (empty envelope when undefined).
pub fn write_records_csv<W: Write>(records: &[SlopeRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,nu,s,u_at_nu,kconv_at_nu,envelope")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.t),
            fmt_f64(r.nu),
            fmt_f64(r.s),
            fmt_f64(r.u_at_nu),
            fmt_f64(r.kconv_at_nu),
            r.envelope.map(fmt_f64).unwrap_or_default()
        )?;
    }
    Ok(())
}
