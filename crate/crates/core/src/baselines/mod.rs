//! Classical reconstructions: density-compensated adjoint, l1-wavelet FISTA
//! and isotropic TV.

mod wavelet;

pub use wavelet::{
    complex_soft_threshold, db4_high, detail_l1, dwt3, idwt3, threshold_details, WaveletPlan, DB4_LOW,
    DEFAULT_LEVELS, MIN_COARSE_LEN,
};

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    estimate_density_weights, CoilSet, DensityWeights, EncodingOperator, KSpaceData, KSpaceTrajectory,
    DEFAULT_PIPE_ITERATIONS,
};
use crate::solvers::{condat_tv_reconstruct, fista_minimize, power_iteration_norm, DEFAULT_POWER_SEED};
use crate::volume::ComplexVolume;

pub const DEFAULT_NORM_ITERS: usize = 50;
/// Power iteration approaches `|A|^2` from below; steps use this margin.
pub const STEP_SAFETY: f64 = 1.02;
pub const TV_TOLERANCE: f64 = 5e-4;

/// `|A^H A|` by power iteration on the normal operator.
pub fn operator_norm_sq(op: &EncodingOperator, iters: usize) -> Result<f64> {
    let dims = op.dims();
    let apply = |v: &[f64]| -> Result<Vec<f64>> { Ok(op.normal(&ComplexVolume::from_real(dims, v)?)?.to_real()) };
    let n = 2 * dims.iter().product::<usize>();
    let res = power_iteration_norm(&apply, n, iters, DEFAULT_POWER_SEED)?;
    if res.norm == 0.0 {
        return Err(Error::Degenerate("encoding operator is zero".into()));
    }
    Ok(res.norm)
}

/// Measured data together with its encoding operator and density weights.
pub struct ReconProblem {
    pub op: EncodingOperator,
    pub y: KSpaceData,
    pub weights: DensityWeights,
    norm_sq: OnceLock<f64>,
    aty: OnceLock<ComplexVolume>,
}

impl ReconProblem {
    pub fn new(op: EncodingOperator, y: KSpaceData, weights: DensityWeights) -> Result<Self> {
        if y.coils() != op.coils().len() || y.samples() != op.trajectory().len() || weights.len() != y.samples() {
            return Err(Error::DimMismatch(format!(
                "data C={} M={}, weights {}, operator C={} M={}",
                y.coils(),
                y.samples(),
                weights.len(),
                op.coils().len(),
                op.trajectory().len()
            )));
        }
        Ok(Self { op, y, weights, norm_sq: OnceLock::new(), aty: OnceLock::new() })
    }

    /// Estimates density weights with the default number of Pipe iterations.
    pub fn with_estimated_weights(coils: CoilSet, traj: KSpaceTrajectory, y: KSpaceData) -> Result<Self> {
        let weights = estimate_density_weights(&traj, coils.dims(), DEFAULT_PIPE_ITERATIONS)?;
        Self::new(EncodingOperator::new(coils, traj), y, weights)
    }

    /// `|A|^2`, estimated once by power iteration.
    pub fn op_norm_sq(&self) -> Result<f64> {
        if let Some(v) = self.norm_sq.get() {
            return Ok(*v);
        }
        let v = operator_norm_sq(&self.op, DEFAULT_NORM_ITERS)?;
        Ok(*self.norm_sq.get_or_init(|| v))
    }

    /// `A^H y`.
    pub fn adjoint_data(&self) -> Result<&ComplexVolume> {
        if let Some(v) = self.aty.get() {
            return Ok(v);
        }
        let v = self.op.adjoint(&self.y)?;
        Ok(self.aty.get_or_init(|| v))
    }

    /// `A^H (A x - y)` through the Toeplitz normal operator.
    pub fn data_gradient(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        let mut g = self.op.normal(x)?;
        g.axpy(Complex64::new(-1.0, 0.0), self.adjoint_data()?);
        Ok(g)
    }

    /// `(1/2 |A x - y|^2, A^H (A x - y))` from one normal-operator product.
    pub fn data_value_and_gradient(&self, x: &ComplexVolume) -> Result<(f64, ComplexVolume)> {
        let ahax = self.op.normal(x)?;
        let aty = self.adjoint_data()?;
        let value = 0.5 * (x.dot(&ahax) - 2.0 * x.dot(aty) + self.y.norm_sqr());
        let mut g = ahax;
        g.axpy(Complex64::new(-1.0, 0.0), aty);
        Ok((value.max(0.0), g))
    }
}

/// `sum_c conj(S_c) . F^H (w . y_c)`.
pub fn recon_dcp(problem: &ReconProblem) -> Result<ComplexVolume> {
    problem.op.weighted_adjoint(&problem.y, Some(&problem.weights))
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub x: ComplexVolume,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterativeParams {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl IterativeParams {
    pub fn l1_wavelet_default() -> Self {
        Self { lambda: 1e2, max_iters: 300, tol: 5e-4 }
    }

    pub fn tv_default() -> Self {
        Self { lambda: 3e2, max_iters: 500, tol: TV_TOLERANCE }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config(format!("invalid iterative parameters {self:?}")));
        }
        Ok(())
    }
}

impl Default for IterativeParams {
    fn default() -> Self {
        Self::tv_default()
    }
}

/// FISTA on `1/2 |A x - y|^2 + lambda |details(W x)|_1`, started from the
/// density-compensated adjoint.
pub fn recon_l1_wavelet(problem: &ReconProblem, params: &IterativeParams) -> Result<BaselineResult> {
    params.validate()?;
    let dims = problem.op.dims();
    let plan = WaveletPlan::with_default_levels(dims)?;
    let step = 1.0 / (STEP_SAFETY * problem.op_norm_sq()?);
    let x0 = recon_dcp(problem)?;
    let grad = |v: &[f64]| -> Result<Vec<f64>> {
        Ok(problem.data_gradient(&ComplexVolume::from_real(dims, v)?)?.to_real())
    };
    let lambda = params.lambda;
    let prox = |v: &[f64], s: f64| -> Result<Vec<f64>> {
        let mut c = dwt3(&ComplexVolume::from_real(dims, v)?, &plan)?;
        threshold_details(&mut c, &plan, lambda * s);
        Ok(idwt3(&c, &plan)?.to_real())
    };
    let res = fista_minimize(&grad, &prox, &x0.to_real(), step, params.max_iters, params.tol)?;
    if !res.converged {
        log::warn!("l1-wavelet FISTA hit the iteration cap ({})", params.max_iters);
    }
    Ok(BaselineResult { x: ComplexVolume::from_real(dims, &res.x)?, iterations: res.iterations, converged: res.converged })
}

/// Isotropic TV by the primal-dual iteration, started from the
/// density-compensated adjoint.
pub fn recon_tv(problem: &ReconProblem, params: &IterativeParams) -> Result<BaselineResult> {
    params.validate()?;
    let norm_sq = STEP_SAFETY * problem.op_norm_sq()?;
    let x0 = recon_dcp(problem)?;
    let data_grad = |x: &ComplexVolume| problem.data_gradient(x);
    let res = condat_tv_reconstruct(&data_grad, norm_sq, params.lambda, &x0, params.tol, params.max_iters)?;
    if !res.converged {
        log::warn!("TV primal-dual hit the iteration cap ({})", params.max_iters);
    }
    Ok(BaselineResult { x: res.x, iterations: res.iterations, converged: res.converged })
}
