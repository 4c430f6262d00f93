//! Spatial correlation functions ξⁱ(x) of the transport noise.

use crate::field::{Field, FieldError, Grid};

/// One correlation function.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseMode {
    /// ξ(x) = c
    Constant { c: f64 },
    /// ξ(x) = c + a·eˣ + b·e⁻ˣ, evaluated at the raw node coordinates (not periodic).
    Exponential { c: f64, a: f64, b: f64 },
    /// ξ sampled on a periodic grid; derivatives are spectral.
    Sampled(Field),
}

impl NoiseMode {
    pub fn is_constant(&self) -> bool {
        matches!(self, NoiseMode::Constant { .. })
    }

    /// `(ξ, ξ', ξ'', ξ''')` at a point of the real line. Sampled modes are
    /// evaluated by trigonometric interpolation of their periodic extension.
    pub fn eval_line(&self, x: f64) -> [f64; 4] {
        match self {
            NoiseMode::Constant { c } => [*c, 0.0, 0.0, 0.0],
            NoiseMode::Exponential { c, a, b } => {
                let (ep, em) = (a * x.exp(), b * (-x).exp());
                [c + ep + em, ep - em, ep + em, ep - em]
            }
            NoiseMode::Sampled(f) => {
                let xw = f.grid().wrap(x);
                [
                    f.interpolate(xw),
                    f.derivative().interpolate(xw),
                    f.derivative_n(2).interpolate(xw),
                    f.derivative_n(3).interpolate(xw),
                ]
            }
        }
    }
}

/// A mode tabulated on a grid together with its first three derivatives.
#[derive(Clone, Debug)]
pub struct ModeProfile {
    pub mode: NoiseMode,
    pub xi: Vec<f64>,
    pub xi_x: Vec<f64>,
    pub xi_xx: Vec<f64>,
    pub xi_xxx: Vec<f64>,
}

impl ModeProfile {
    pub fn new(grid: &Grid, mode: NoiseMode) -> Result<Self, FieldError> {
        let n = grid.n();
        let (xi, xi_x, xi_xx, xi_xxx) = match &mode {
            NoiseMode::Constant { c } => (vec![*c; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]),
            NoiseMode::Exponential { .. } => {
                let mut cols = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for j in 0..n {
                    let v = mode.eval_line(grid.x(j));
                    for (col, vd) in cols.iter_mut().zip(v) {
                        col[j] = vd;
                    }
                }
                let [a, b, c, d] = cols;
                (a, b, c, d)
            }
            NoiseMode::Sampled(f) => {
                if f.grid() != grid {
                    return Err(FieldError::GridMismatch);
                }
                (
                    f.values().to_vec(),
                    grid.derivative_of(f.values(), 1),
                    grid.derivative_of(f.values(), 2),
                    grid.derivative_of(f.values(), 3),
                )
            }
        };
        for (index, &value) in xi.iter().chain(&xi_x).chain(&xi_xx).chain(&xi_xxx).enumerate() {
            if !value.is_finite() {
                return Err(FieldError::NonFinite { index: index % n, value });
            }
        }
        Ok(Self { mode, xi, xi_x, xi_xx, xi_xxx })
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.mode {
            NoiseMode::Constant { c } => Some(c),
            _ => None,
        }
    }

    /// `‖ξ‖∞² + ‖ξ_x‖∞²`.
    pub fn strength(&self) -> f64 {
        let a = crate::field::sup_abs(&self.xi);
        let b = crate::field::sup_abs(&self.xi_x);
        a * a + b * b
    }
}

/// The finite family `{ξⁱ}` tabulated on one grid.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    grid: Grid,
    modes: Vec<ModeProfile>,
}

impl NoiseBasis {
    pub fn new(grid: &Grid, modes: Vec<NoiseMode>) -> Result<Self, FieldError> {
        let modes = modes
            .into_iter()
            .map(|m| ModeProfile::new(grid, m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { grid: grid.clone(), modes })
    }

    pub fn empty(grid: &Grid) -> Self {
        Self { grid: grid.clone(), modes: Vec::new() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn modes(&self) -> &[ModeProfile] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn has_exponential(&self) -> bool {
        self.modes.iter().any(|m| matches!(m.mode, NoiseMode::Exponential { .. }))
    }

    /// `Σᵢ(‖ξⁱ‖∞² + ‖ξⁱ_x‖∞²)`.
    pub fn strength(&self) -> f64 {
        self.modes.iter().map(ModeProfile::strength).sum()
    }

    /// `‖ξ‖ = (Σᵢ cᵢ²)^{1/2}` over the constant modes.
    pub fn constant_norm(&self) -> f64 {
        self.modes
            .iter()
            .filter_map(ModeProfile::constant_value)
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }
}
