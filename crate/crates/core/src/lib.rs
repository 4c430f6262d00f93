//! Deterministic and stochastic Camassa–Holm dynamics on a periodic domain:
//! pseudospectral evolution, peakon particle systems, slope tracking at the
//! inflection point, Monte-Carlo breaking statistics for the slope SDE, and the
//! isospectral eigenproblem.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod field;
pub mod harness;
pub mod integrate;
pub mod noise;
pub mod pde;
pub mod peakon;
pub mod peaks;
pub mod rng;
pub mod slope;
pub mod spectrum;
pub mod steepening;

pub use field::{Field, FieldError, Grid};
pub use noise::{ModeProfile, NoiseBasis, NoiseMode};
pub use pde::{simulate, SimConfig, Trajectory};
