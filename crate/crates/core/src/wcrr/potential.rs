//! Huber-difference potentials and their noise-level conditioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 0.01;
pub const SIGMA_MAX: f64 = 0.1;
pub const DEFAULT_KNOTS: usize = 12;
const ALPHA_EPS: f64 = 1e-5;

/// `(beta/2) t^2` for `|t| <= 1/beta`, `|t| - 1/(2 beta)` beyond.
pub fn huber(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 / beta {
        0.5 * beta * t * t
    } else {
        a - 0.5 / beta
    }
}

/// `phi_beta = huber_beta - huber_1`.
pub fn shared_potential(t: f64, beta: f64) -> f64 {
    huber(t, beta) - huber(t, 1.0)
}

pub fn shared_potential_d1(t: f64, beta: f64) -> f64 {
    (beta * t).clamp(-1.0, 1.0) - t.clamp(-1.0, 1.0)
}

/// Second derivative with strict inequalities at the kinks.
pub fn shared_potential_d2(t: f64, beta: f64) -> f64 {
    let a = t.abs();
    let inner = if a < 1.0 / beta { beta } else { 0.0 };
    let outer = if a < 1.0 { 1.0 } else { 0.0 };
    inner - outer
}

/// Knot interval and interpolation weight of a (clamped) noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineWeights {
    pub sigma: f64,
    pub left: usize,
    pub weight: f64,
}

/// Shape parameter `beta = exp(b)` and per-channel spline values for
/// `alpha_j(sigma) = exp(s_j(sigma)) / (sigma + 1e-5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub b: f64,
    pub channels: usize,
    pub knots: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Row-major `channels x knots`.
    pub c: Vec<f64>,
}

impl Potentials {
    pub fn new(channels: usize, knots: usize, sigma_min: f64, sigma_max: f64, beta: f64) -> Result<Self> {
        if channels == 0 || knots < 2 {
            return Err(Error::InvalidArgument("need at least one channel and two knots".into()));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(Error::InvalidArgument(format!("bad sigma range [{sigma_min}, {sigma_max}]")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { b: beta.ln(), channels, knots, sigma_min, sigma_max, c: vec![0.0; channels * knots] })
    }

    pub fn with_defaults(channels: usize) -> Self {
        Self::new(channels, DEFAULT_KNOTS, SIGMA_MIN, SIGMA_MAX, 2.0).expect("valid defaults")
    }

    pub fn beta(&self) -> f64 {
        self.b.exp()
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.sigma_min + (self.sigma_max - self.sigma_min) * i as f64 / (self.knots - 1) as f64
    }

    pub fn knot_values(&self) -> Vec<f64> {
        (0..self.knots).map(|i| self.knot(i)).collect()
    }

    pub fn clamp_sigma(&self, sigma: f64) -> f64 {
        sigma.clamp(self.sigma_min, self.sigma_max)
    }

    pub fn spline_weights(&self, sigma: f64) -> SplineWeights {
        let sigma = self.clamp_sigma(sigma);
        let h = (self.sigma_max - self.sigma_min) / (self.knots - 1) as f64;
        let mut pos = (sigma - self.sigma_min) / h;
        // snap rounding noise so knot inputs read the knot value exactly
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let left = (pos.floor() as usize).min(self.knots - 2);
        SplineWeights { sigma, left, weight: pos - left as f64 }
    }

    fn spline(&self, j: usize, w: &SplineWeights) -> f64 {
        let row = &self.c[j * self.knots..(j + 1) * self.knots];
        (1.0 - w.weight) * row[w.left] + w.weight * row[w.left + 1]
    }
    pub fn alpha(&self, sigma: f64, j: usize) -> f64 {
        let w = self.spline_weights(sigma);
        self.spline(j, &w).exp() / (w.sigma + ALPHA_EPS)
    }

    pub fn alphas(&self, sigma: f64) -> Vec<f64> {
        let w = self.spline_weights(sigma);
        (0..self.channels).map(|j| self.spline(j, &w).exp() / (w.sigma + ALPHA_EPS)).collect()
    }
}

/// `psi(t) = alpha^-2 phi_beta(alpha t)`.
pub fn psi(t: f64, alpha: f64, beta: f64) -> f64 {
    shared_potential(alpha * t, beta) / (alpha * alpha)
}

pub fn psi_d1(t: f64, alpha: f64, beta: f64) -> f64 {
    shared_potential_d1(alpha * t, beta) / alpha
}

pub fn psi_d2(t: f64, alpha: f64, beta: f64) -> f64 {
    shared_potential_d2(alpha * t, beta)
}
