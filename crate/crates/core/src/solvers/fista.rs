//! FISTA for `f + g` with smooth `f` and proximable `g`.

use super::vecops::relative_change;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FistaResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `prox_g(v, step)` must return `argmin_u g(u) + |u - v|^2 / (2 step)`.
pub fn fista_minimize(
    grad_f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    prox_g: &dyn Fn(&[f64], f64) -> Result<Vec<f64>>,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<FistaResult> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("FISTA step must be positive, got {step}")));
    }
    let mut x = x0.to_vec();
    let mut y = x0.to_vec();
    let mut t = 1.0f64;
    for k in 1..=max_iters {
        let g = grad_f(&y)?;
        let v: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let x_next = prox_g(&v, step)?;
        if x_next.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("FISTA iterate {k}")));
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        y = x_next.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        let rel = relative_change(&x_next, &x);
        x = x_next;
        t = t_next;
        if rel < tol {
            return Ok(FistaResult { x, iterations: k, converged: true });
        }
    }
    Ok(FistaResult { x, iterations: max_iters, converged: false })
}

/// Real soft-thresholding `sign(v) max(|v| - thr, 0)`.
pub fn soft_threshold(v: &[f64], thr: f64) -> Vec<f64> {
    v.iter().map(|&e| e.signum() * (e.abs() - thr).max(0.0)).collect()
}
