//! MINRES for symmetric (possibly indefinite) systems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vecops::{dot, norm};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct MinresResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Residual norm estimate `|A x - b|` after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// The Lanczos process terminated (zero next vector) before convergence.
    pub breakdown: bool,
}

impl MinresResult {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Checks `<A u, w> = <u, A w>` on two seeded random probes.
pub fn check_symmetry(apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>, n: usize, rel_tol: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (au, aw) = (apply(&u)?, apply(&w)?);
    let (a, b) = (dot(&au, &w), dot(&u, &aw));
    let scale = (norm(&au) * norm(&w)).max(norm(&u) * norm(&aw));
    if (a - b).abs() > rel_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Solver(format!("operator is not symmetric: <Au,w>={a:e}, <u,Aw>={b:e}")));
    }
    Ok(())
}

/// Solves `A x = b` from `x0 = 0` until `|A x - b| <= tol |b|`.
/// In debug builds the operator is first probed for symmetry.
pub fn minres_solve(
    apply: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<MinresResult> {
    let n = b.len();
    if cfg!(debug_assertions) && n > 0 {
        check_symmetry(apply, n, 1e-8)?;
    }
    let mut x = vec![0.0; n];
    let beta1 = norm(b);
    if beta1 == 0.0 {
        return Ok(MinresResult { x, iterations: 0, residuals: vec![], converged: true, breakdown: false });
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut breakdown = false;
    let mut converged = false;
    let mut itn = 0;
    while itn < max_iters {
        itn += 1;
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|e| e * s).collect();
        y = apply(&v)?;
        if y.len() != n {
            return Err(Error::DimMismatch("operator output length".into()));
        }
        if itn >= 2 {
            let f = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(e, r)| *e -= f * r);
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(e, r)| *e -= f * r);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = norm(&y);
        if !alfa.is_finite() || !beta.is_finite() {
            return Err(Error::NonFinite(format!("MINRES Lanczos step {itn}")));
        }
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON * beta1);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        residuals.push(phibar.abs());
        if phibar.abs() <= tol * beta1 {
            converged = true;
            break;
        }
        if beta <= f64::EPSILON * beta1 {
            breakdown = true;
            break;
        }
    }
    if breakdown {
        log::warn!("MINRES breakdown after {itn} iterations, residual {:e}", phibar.abs());
    }
    Ok(MinresResult { x, iterations: itn, residuals, converged, breakdown })
}
