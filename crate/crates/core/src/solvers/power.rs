//! Power iteration for the spectral norm of a symmetric operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vecops::{dot, norm};
use crate::error::{Error, Result};

pub const DEFAULT_POWER_SEED: u64 = 0x9e37_79b9;

#[derive(Clone, Debug)]
pub struct PowerResult {
    /// `|<u, A u>|` for the final unit vector `u`.
    pub norm: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Runs `iters` steps of `u <- A u / |A u|` from a seeded random unit vector.
pub fn power_iteration_norm(
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<PowerResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n0 = norm(&u);
    u.iter_mut().for_each(|e| *e /= n0);
    let mut estimate = 0.0;
    for it in 0..iters {
        let au = apply(&u)?;
        let rayleigh = dot(&u, &au);
        let na = norm(&au);
        if !na.is_finite() {
            return Err(Error::NonFinite(format!("power iteration step {it}")));
        }
        if na == 0.0 {
            return Ok(PowerResult { norm: 0.0, vector: u, iterations: it + 1 });
        }
        estimate = rayleigh.abs();
        u = au.iter().map(|e| e / na).collect();
        if it + 1 == iters {
            let au = apply(&u)?;
            estimate = dot(&u, &au).abs();
        }
    }
    Ok(PowerResult { norm: estimate, vector: u, iterations: iters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_diagonal_entry() {
        let apply = |v: &[f64]| Ok(vec![3.0 * v[0], -v[1], 2.0 * v[2]]);
        let r = power_iteration_norm(&apply, 3, 50, 1).unwrap();
        assert!((r.norm - 3.0).abs() < 1e-6);
    }

    #[test]
    fn identity_in_one_step() {
        let r = power_iteration_norm(&|v: &[f64]| Ok(v.to_vec()), 7, 1, 2).unwrap();
        assert!((r.norm - 1.0).abs() < 1e-14);
        assert!((norm(&r.vector) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_operator() {
        let r = power_iteration_norm(&|v: &[f64]| Ok(vec![0.0; v.len()]), 4, 10, 3).unwrap();
        assert_eq!(r.norm, 0.0);
    }

    #[test]
    fn negative_dominant_eigenvalue() {
        let apply = |v: &[f64]| Ok(vec![-5.0 * v[0], 1.0 * v[1]]);
        let r = power_iteration_norm(&apply, 2, 60, 4).unwrap();
        assert!((r.norm - 5.0).abs() < 1e-9);
    }
}
