use super::ndft::PhaseTables;
use super::trajectory::KSpaceTrajectory;
use crate::error::{Error, Result};
use crate::volume::Dims;

pub const DEFAULT_PIPE_ITERATIONS: usize = 10;
const DENOMINATOR_GUARD: f64 = 1e-12;

/// Per-sample density compensation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityWeights {
    weights: Vec<f64>,
}

impl DensityWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("density weights must be finite and >= 0".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Pipe's fixed-point iteration `w <- w / |F F^H w|`, starting from ones.
pub fn estimate_density_weights(
    traj: &KSpaceTrajectory,
    dims: Dims,
    iters: usize,
) -> Result<DensityWeights> {
    if iters == 0 {
        return Err(Error::InvalidArgument("need at least one Pipe iteration".into()));
    }
    let tables = PhaseTables::new(traj, dims);
    let mut w = vec![1.0; traj.len()];
    for _ in 0..iters {
        let wc: Vec<_> = w.iter().map(|&v| num_complex::Complex64::new(v, 0.0)).collect();
        let denom = tables.forward(&tables.adjoint(&wc));
        for (m, (wm, dm)) in w.iter_mut().zip(&denom).enumerate() {
            let mag = dm.norm();
            if mag < DENOMINATOR_GUARD {
                return Err(Error::Degenerate(format!(
                    "density estimate denominator vanished at sample {m}"
                )));
            }
            *wm /= mag;
        }
    }
    DensityWeights::new(w)
}
