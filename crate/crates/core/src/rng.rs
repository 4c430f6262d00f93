//! Counter-based Gaussian increments.
//!
//! Every Brownian increment is addressed by `(master seed, path, mode, step)`.
//! The ChaCha8 key comes from the master seed, the 64-bit stream id packs the
//! path index and mode index, and the word position inside the stream is
//! `4 * step` (two 64-bit words per standard normal). Results therefore do not
//! depend on the order in which paths or steps are evaluated.
//!
//! Refinement studies use a base step `base_dt`: an increment over
//! `dt = 2^r * base_dt` is the scaled sum of the `2^r` base normals it covers,
//! so coarse and fine runs share the same underlying Brownian path.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MODE_BITS: u32 = 16;
const WORDS_PER_NORMAL: u128 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum RngError {
    #[error("path index {0} does not fit in {bits} bits", bits = 64 - MODE_BITS)]
    PathOutOfRange(u64),
    #[error("mode index {0} does not fit in {MODE_BITS} bits")]
    ModeOutOfRange(usize),
    #[error("step {dt} is not a power-of-two multiple of base step {base_dt}")]
    NotNested { dt: f64, base_dt: f64 },
}

/// Address of one Gaussian stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    pub mode: usize,
}

/// Standard normals `z(step)` for one `(seed, path, mode)`.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(key: StreamKey) -> Result<Self, RngError> {
        if key.path >> (64 - MODE_BITS) != 0 {
            return Err(RngError::PathOutOfRange(key.path));
        }
        if key.mode >= 1 << MODE_BITS {
            return Err(RngError::ModeOutOfRange(key.mode));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
        rng.set_stream((key.path << MODE_BITS) | key.mode as u64);
        Ok(Self { rng })
    }

    /// The standard normal assigned to `step`. Sequential access is cheapest.
    pub fn normal_at(&mut self, step: u64) -> f64 {
        let pos = step as u128 * WORDS_PER_NORMAL;
        if self.rng.get_word_pos() != pos {
            self.rng.set_word_pos(pos);
        }
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        box_muller(a, b)
    }
}

/// Maps two uniform words to one standard normal (cosine branch only, so the
/// number of words consumed per normal is fixed).
fn box_muller(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Brownian increments for several modes of one path.
#[derive(Debug, Clone)]
pub struct BrownianIncrements {
    streams: Vec<NormalStream>,
    base_dt: f64,
}

impl BrownianIncrements {
    pub fn new(seed: u64, path: u64, n_modes: usize, base_dt: f64) -> Result<Self, RngError> {
        let streams = (0..n_modes)
            .map(|mode| NormalStream::new(StreamKey { seed, path, mode }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { streams, base_dt })
    }

    pub fn n_modes(&self) -> usize {
        self.streams.len()
    }

    pub fn base_dt(&self) -> f64 {
        self.base_dt
    }

    /// Number of base steps covered by one step of size `dt`.
    pub fn refinement(&self, dt: f64) -> Result<u64, RngError> {
        nesting_ratio(dt, self.base_dt)
    }

    /// Fills `out[i]` with the increment of mode `i` over step `step` of size `dt`.
    pub fn fill(&mut self, step: u64, dt: f64, out: &mut [f64]) -> Result<(), RngError> {
        let r = self.refinement(dt)?;
        let scale = self.base_dt.sqrt();
        for (stream, dw) in self.streams.iter_mut().zip(out.iter_mut()) {
            let first = step * r;
            let sum: f64 = (first..first + r).map(|k| stream.normal_at(k)).sum();
            *dw = scale * sum;
        }
        Ok(())
    }

    /// Convenience for the single-mode case.
    pub fn next_scalar(&mut self, step: u64, dt: f64) -> Result<f64, RngError> {
        let mut out = [0.0];
        self.fill(step, dt, &mut out)?;
        Ok(out[0])
    }
}

/// `dt / base_dt` as a power of two, or an error.
pub fn nesting_ratio(dt: f64, base_dt: f64) -> Result<u64, RngError> {
    let ratio = dt / base_dt;
    let r = ratio.round();
    if !(r >= 1.0) || (ratio - r).abs() > 1e-9 * r || !(r as u64).is_power_of_two() {
        return Err(RngError::NotNested { dt, base_dt });
    }
    Ok(r as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let key = StreamKey { seed: 7, path: 3, mode: 1 };
        let mut seq = NormalStream::new(key).unwrap();
        let forward: Vec<f64> = (0..40).map(|k| seq.normal_at(k)).collect();
        let mut rnd = NormalStream::new(key).unwrap();
        for k in (0..40).rev() {
            assert_eq!(rnd.normal_at(k).to_bits(), forward[k as usize].to_bits());
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = NormalStream::new(StreamKey { seed: 1, path: 0, mode: 0 }).unwrap();
        let mut b = NormalStream::new(StreamKey { seed: 1, path: 1, mode: 0 }).unwrap();
        let mut c = NormalStream::new(StreamKey { seed: 1, path: 0, mode: 1 }).unwrap();
        let za = a.normal_at(0);
        assert_ne!(za, b.normal_at(0));
        assert_ne!(za, c.normal_at(0));
    }

    #[test]
    fn moments_are_standard() {
        let mut s = NormalStream::new(StreamKey { seed: 11, path: 0, mode: 0 }).unwrap();
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for k in 0..n {
            let z = s.normal_at(k);
            m1 += z;
            m2 += z * z;
        }
        let mean = m1 / n as f64;
        let var = m2 / n as f64 - mean * mean;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn coarse_increments_are_sums_of_fine_ones() {
        let base = 1.0 / 1024.0;
        let mut fine = BrownianIncrements::new(5, 2, 2, base).unwrap();
        let mut coarse = BrownianIncrements::new(5, 2, 2, base).unwrap();
        let mut f = [0.0; 2];
        let mut sum = [0.0; 2];
        for k in 0..8 {
            fine.fill(8 + k, base, &mut f).unwrap();
            sum[0] += f[0];
            sum[1] += f[1];
        }
        let mut c = [0.0; 2];
        coarse.fill(1, 8.0 * base, &mut c).unwrap();
        for i in 0..2 {
            assert!((c[i] - sum[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn non_nested_step_is_rejected() {
        let mut inc = BrownianIncrements::new(0, 0, 1, 0.01).unwrap();
        assert!(matches!(inc.next_scalar(0, 0.03), Err(RngError::NotNested { .. })));
        assert!(matches!(inc.next_scalar(0, 0.005), Err(RngError::NotNested { .. })));
        assert!(inc.next_scalar(0, 0.04).is_ok());
    }
}
