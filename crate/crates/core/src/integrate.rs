//! Explicit one-step integrators shared by the field, particle and scalar solvers.
//!
//! States are flat `f64` slices. The stochastic integrator works on the full
//! increment `G(x) = f(x)·dt + Σᵢ σᵢ(x)·dWᵢ` of a Stratonovich SDE, with the
//! Brownian increments already folded into `G` by the caller.

/// Classical four-stage Runge–Kutta step for `dx/dt = f(x)`.
pub fn rk4_step<F>(x: &[f64], dt: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let k1 = f(x);
    let mut stage = vec![0.0; n];
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    let k2 = f(&stage);
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&stage);
    for i in 0..n {
        stage[i] = x[i] + dt * k3[i];
    }
    let k4 = f(&stage);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Stratonovich–Heun step with an optional exactly integrated linear flow `S`:
///
/// ```text
/// x̃  = S(x + G(x))
/// x' = S(x + ½G(x)) + ½G(x̃)
/// ```
///
/// With `S` the identity this is the plain predictor–corrector Heun scheme.
pub fn heun_step_with_flow<G, S>(x: &[f64], mut increment: G, flow: S) -> Vec<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
    S: Fn(&mut [f64]),
{
    let g0 = increment(x);
    let mut predictor: Vec<f64> = x.iter().zip(&g0).map(|(a, b)| a + b).collect();
    flow(&mut predictor);
    let g1 = increment(&predictor);
    let mut out: Vec<f64> = x.iter().zip(&g0).map(|(a, b)| a + 0.5 * b).collect();
    flow(&mut out);
    for (o, b) in out.iter_mut().zip(&g1) {
        *o += 0.5 * b;
    }
    out
}

pub fn heun_step<G>(x: &[f64], increment: G) -> Vec<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    heun_step_with_flow(x, increment, |_| {})
}

/// Euler–Maruyama step for an Itô SDE, given the full increment.
pub fn euler_maruyama_step<G>(x: &[f64], mut increment: G) -> Vec<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let g = increment(x);
    x.iter().zip(&g).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let err = |dt: f64| {
            let mut x = vec![1.0];
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                x = rk4_step(&x, dt, |y| vec![-y[0]]);
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }

    #[test]
    fn heun_without_noise_is_the_trapezoidal_predictor_corrector() {
        let dt = 0.1;
        let x = heun_step(&[2.0], |y| vec![-y[0] * dt]);
        let pred = 2.0 - 0.2;
        assert!((x[0] - (2.0 + 0.5 * (-0.2) + 0.5 * (-pred * dt))).abs() < 1e-15);
    }

    #[test]
    fn heun_flow_identity_matches_plain_heun() {
        let g = |y: &[f64]| vec![0.1 * y[0] * y[1], -0.05 * y[0]];
        let a = heun_step(&[1.0, 2.0], g);
        let b = heun_step_with_flow(&[1.0, 2.0], g, |_| {});
        assert_eq!(a, b);
    }

    #[test]
    fn heun_with_only_flow_applies_the_flow_once() {
        let x = heun_step_with_flow(&[1.0], |_| vec![0.0], |y| y[0] *= 3.0);
        assert_eq!(x, vec![3.0]);
    }
}
