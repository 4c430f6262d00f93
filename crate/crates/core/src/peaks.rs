//! Local maxima of periodic samples with quadratic sub-grid refinement.

use crate::field::Field;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    /// Refined position in `[0, L)`.
    pub x: f64,
    pub height: f64,
    /// Height above the higher of the two saddles separating it from taller peaks.
    pub prominence: f64,
}

/// Maxima of `u` at least `min_height` tall and `min_prominence` prominent,
/// tallest first. Of two maxima closer than `min_separation`, only the taller survives.
pub fn find_peaks(u: &Field, min_height: f64, min_prominence: f64, min_separation: f64) -> Vec<Peak> {
    let v = u.values();
    let n = v.len();
    let dx = u.grid().dx();
    let at = |j: isize| v[j.rem_euclid(n as isize) as usize];

    let mut peaks = Vec::new();
    for j in 0..n as isize {
        let (a, b, c) = (at(j - 1), at(j), at(j + 1));
        if !(b > a && b >= c) {
            continue;
        }
        let curv = a - 2.0 * b + c;
        let delta = if curv < 0.0 { 0.5 * (a - c) / curv } else { 0.0 };
        let height = b - 0.25 * (a - c) * delta;
        if height < min_height {
            continue;
        }
        let prominence = height - saddle(v, j as usize, b);
        if prominence < min_prominence {
            continue;
        }
        let x = u.grid().wrap((j as f64 + delta) * dx);
        peaks.push(Peak { x, height, prominence });
    }
    peaks.sort_by(|p, q| q.height.total_cmp(&p.height));

    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| u.grid().periodic_delta(p.x, k.x).abs() >= min_separation) {
            kept.push(p);
        }
    }
    kept
}

/// Walks both ways from `j` until a sample above `top`, returning the higher
/// of the two minima met on the way.
fn saddle(v: &[f64], j: usize, top: f64) -> f64 {
    let n = v.len();
    let walk = |step: usize| {
        let mut lowest = top;
        let mut k = j;
        for _ in 1..n {
            k = (k + step) % n;
            if v[k] > top {
                return lowest;
            }
            lowest = lowest.min(v[k]);
        }
        // global maximum: compare against the lowest point anywhere
        lowest
    };
    walk(1).max(walk(n - 1))
}
