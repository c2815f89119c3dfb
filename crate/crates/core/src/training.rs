//! Denoising-task training with implicit differentiation through the
//! denoiser's fixed point.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{minres_solve, nmapg_minimize, power_iteration_norm, NmapgResult, Objective, SolverConfig};
use crate::volume::{ComplexVolume, Dims};
use crate::wcrr::{grad_inner_param_gradient, hessian_form_param_gradient, ModelConfig, WcrrModel};

/// `x + sigma n` with i.i.d. standard normal `n` on both channels.
pub fn corrupt(x: &ComplexVolume, sigma: f64, seed: u64) -> Result<ComplexVolume> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x
        .data()
        .iter()
        .map(|z| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            z + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexVolume::from_vec(x.dims(), data)
}

/// `J(x) = 1/2 |x - y|^2 + R(x)` on the interleaved real view.
pub struct DenoiseObjective<'a> {
    pub model: &'a WcrrModel,
    pub y: &'a ComplexVolume,
    pub sigma: f64,
}

impl DenoiseObjective<'_> {
    fn volume(&self, x: &[f64]) -> Result<ComplexVolume> {
        ComplexVolume::from_real(self.y.dims(), x)
    }
}

impl Objective for DenoiseObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let v = self.volume(x)?;
        Ok(0.5 * v.sub(self.y).norm_sqr() + self.model.value(&v, self.sigma)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.volume(x)?;
        let diff = v.sub(self.y);
        let (r, mut g) = self.model.value_and_grad(&v, self.sigma)?;
        g.axpy(Complex64::new(1.0, 0.0), &diff);
        Ok((0.5 * diff.norm_sqr() + r, g.to_real()))
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseResult {
    pub x: ComplexVolume,
    /// `|x - y + grad R(x)|`.
    pub residual: f64,
    pub solver: NmapgResult,
}

/// Proximal denoiser `argmin_x 1/2 |x - y|^2 + R_sigma(x)` by nmAPG from `x0 = y`.
pub fn denoise(model: &WcrrModel, y: &ComplexVolume, sigma: f64, cfg: &SolverConfig) -> Result<DenoiseResult> {
    let obj = DenoiseObjective { model, y, sigma };
    let solver = nmapg_minimize(&obj, &y.to_real(), cfg)?;
    let x = ComplexVolume::from_real(y.dims(), &solver.x)?;
    let mut fp = x.sub(y);
    fp.axpy(Complex64::new(1.0, 0.0), &model.grad(&x, sigma)?);
    let residual = fp.norm();
    if !solver.converged {
        log::warn!(
            "denoiser stopped after {} iterations without meeting eps={:e}; fixed-point residual {residual:e}",
            solver.iterations,
            cfg.eps
        );
    }
    Ok(DenoiseResult { x, residual, solver })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplicitConfig {
    pub minres_tol: f64,
    pub minres_max_iters: usize,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        Self { minres_tol: 1e-8, minres_max_iters: 300 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamGradient {
    pub grad: Vec<f64>,
    pub minres_iterations: usize,
    pub minres_residual: f64,
}

/// Gradient over the model parameters of a loss `l(x_hat)` whose gradient at
/// the denoiser output `x_hat` is `loss_grad`: solves `(I + H) v = loss_grad`
/// and returns `-d/dtheta <grad R_theta(x_hat), v>`.
pub fn param_gradient(
    model: &WcrrModel,
    sigma: f64,
    x_hat: &ComplexVolume,
    loss_grad: &ComplexVolume,
    cfg: &ImplicitConfig,
) -> Result<ParamGradient> {
    if x_hat.dims() != loss_grad.dims() {
        return Err(Error::DimMismatch("denoiser output and loss gradient".into()));
    }
    if loss_grad.norm_sqr() == 0.0 {
        return Ok(ParamGradient { grad: vec![0.0; model.param_count()], minres_iterations: 0, minres_residual: 0.0 });
    }
    let dims = x_hat.dims();
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let vv = ComplexVolume::from_real(dims, v)?;
        let mut hv = model.hvp(x_hat, sigma, &vv)?;
        hv.axpy(Complex64::new(1.0, 0.0), &vv);
        Ok(hv.to_real())
    };
    let b = loss_grad.to_real();
    let mut sol = minres_solve(&apply, &b, cfg.minres_tol, cfg.minres_max_iters)?;
    if !sol.converged {
        log::warn!("MINRES did not converge in {} iterations; retrying with more", sol.iterations);
        sol = minres_solve(&apply, &b, cfg.minres_tol, 4 * cfg.minres_max_iters)?;
        if !sol.converged && sol.residual() > 1e3 * cfg.minres_tol * crate::solvers::vecops::norm(&b) {
            return Err(Error::Solver(format!(
                "MINRES failed: relative residual {:e} after {} iterations",
                sol.residual() / crate::solvers::vecops::norm(&b),
                sol.iterations
            )));
        }
    }
    let v = ComplexVolume::from_real(dims, &sol.x)?;
    let mut grad = grad_inner_param_gradient(model, x_hat, &v, sigma)?;
    grad.iter_mut().for_each(|g| *g = -*g);
    Ok(ParamGradient { grad, minres_iterations: sol.iterations, minres_residual: sol.residual() })
}

/// `(mu |<u, H u>|, gradient)` with `u` the power-iteration eigenvector of
/// `H(x_hat)`, held fixed when differentiating.
pub fn hessian_penalty_gradient(
    model: &WcrrModel,
    x_hat: &ComplexVolume,
    sigma: f64,
    mu: f64,
    power_iters: usize,
) -> Result<(f64, Vec<f64>)> {
    let dims = x_hat.dims();
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        Ok(model.hvp(x_hat, sigma, &ComplexVolume::from_real(dims, v)?)?.to_real())
    };
    let pw = power_iteration_norm(&apply, 2 * x_hat.len(), power_iters, crate::solvers::DEFAULT_POWER_SEED)?;
    if pw.norm == 0.0 {
        return Ok((0.0, vec![0.0; model.param_count()]));
    }
    let u = ComplexVolume::from_real(dims, &pw.vector)?;
    let (q, mut grad) = hessian_form_param_gradient(model, x_hat, &u, sigma)?;
    let sign = q.signum() * mu;
    grad.iter_mut().for_each(|g| *g *= sign);
    Ok((mu * q.abs(), grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], s: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-16 }
    }
}

/// One AdaBelief update.
pub fn adabelief_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch("optimizer, parameter and gradient lengths differ".into()));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        let d = g - state.m[i];
        state.s[i] = b2 * state.s[i] + (1.0 - b2) * d * d;
        let m_hat = state.m[i] / c1;
        let s_hat = state.s[i] / c2;
        if m_hat != 0.0 {
            params[i] -= lr * m_hat / (s_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    /// Hessian-penalty weight.
    pub mu: f64,
    pub penalty_every: usize,
    pub power_iters: usize,
    pub patch_size: usize,
    /// Random patches drawn from every volume per epoch.
    pub patches_per_volume: usize,
    pub seed: u64,
    /// Noise levels are drawn from the spline knots unless overridden here.
    pub sigma_override: Option<f64>,
    pub solver: SolverConfig,
    pub implicit: ImplicitConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            epochs: 500,
            learning_rate: 1e-2,
            lr_decay: 0.05f64.powf(1.0 / 500.0),
            mu: 1e-6,
            penalty_every: 5,
            power_iters: 50,
            patch_size: 12,
            patches_per_volume: 1,
            seed: 0,
            sigma_override: None,
            solver: SolverConfig { max_iters: 500, ..SolverConfig::default() },
            implicit: ImplicitConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (1..=4096).contains(&self.batch_size)
            && self.epochs >= 1
            && self.learning_rate > 0.0
            && self.lr_decay > 0.0
            && self.mu >= 0.0
            && self.penalty_every >= 1
            && (1..=50).contains(&self.power_iters)
            && (2..=512).contains(&self.patch_size)
            && (1..=4096).contains(&self.patches_per_volume)
            && self.sigma_override.is_none_or(|s| s >= 0.0 && s.is_finite())
            && self.implicit.minres_tol > 0.0
            && self.implicit.minres_tol.is_finite()
            && self.implicit.minres_max_iters >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        self.solver.validate()
    }
}

/// Model and training settings read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl TrainRunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.training.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub penalty: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: WcrrModel,
    pub history: Vec<LossRow>,
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
}

pub fn write_loss_csv<W: std::io::Write>(mut out: W, rows: &[LossRow]) -> std::io::Result<()> {
    writeln!(out, "step,epoch,loss,penalty,lr,wall_ms")?;
    for r in rows {
        writeln!(out, "{},{},{:e},{:e},{:e},{:.3}", r.step, r.epoch, r.loss, r.penalty, r.lr, r.wall_ms)?;
    }
    Ok(())
}

/// Noise levels for one batch: distinct knots, exhausting the knot set before repeating.
pub fn assign_sigmas(knots: &[f64], batch: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch);
    while out.len() < batch {
        let mut perm = knots.to_vec();
        perm.shuffle(rng);
        let take = (batch - out.len()).min(perm.len());
        out.extend_from_slice(&perm[..take]);
    }
    out
}

fn random_patch(v: &ComplexVolume, size: usize, rng: &mut ChaCha8Rng) -> Result<ComplexVolume> {
    let d = v.dims();
    let size_d: Dims = d.map(|n| size.min(n));
    let corner = [0, 1, 2].map(|a| rng.random_range(0..=d[a] - size_d[a]));
    v.extract_patch(corner, size_d)
}

struct ElementResult {
    loss: f64,
    grad: Vec<f64>,
    penalty: f64,
    penalty_grad: Option<Vec<f64>>,
}

/// Trains `model` on random patches of `dataset`; `on_epoch(epoch, model)` is
/// called after every epoch (for checkpointing).
pub fn train(
    dataset: &[ComplexVolume],
    mut model: WcrrModel,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(usize, &WcrrModel) -> Result<()>,
) -> Result<TrainingOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let knots = model.potentials().knot_values();
    let steps_per_epoch = (dataset.len() * cfg.patches_per_volume).div_ceil(cfg.batch_size);
    let mut opt = OptimizerState::new(model.param_count());
    let mut history = Vec::new();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let sigmas = match cfg.sigma_override {
                Some(s) => vec![s; cfg.batch_size],
                None => assign_sigmas(&knots, cfg.batch_size, &mut rng),
            };
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for &sigma in &sigmas {
                let vol = &dataset[rng.random_range(0..dataset.len())];
                let clean = random_patch(vol, cfg.patch_size, &mut rng)?;
                let noise_seed: u64 = rng.random();
                batch.push((clean, sigma, noise_seed));
            }
            let with_penalty = cfg.mu > 0.0 && step % cfg.penalty_every == 0;
            let results: Vec<Result<ElementResult>> = batch
                .par_iter()
                .enumerate()
                .map(|(e, (clean, sigma, seed))| {
                    let ctx = |err: Error| Error::Solver(format!("step {step}, batch element {e}: {err}"));
                    let y = corrupt(clean, *sigma, *seed)?;
                    let den = denoise(&model, &y, *sigma, &cfg.solver).map_err(ctx)?;
                    let diff = den.x.sub(clean);
                    let loss_grad = diff.scaled(Complex64::new(2.0, 0.0));
                    let pg = param_gradient(&model, *sigma, &den.x, &loss_grad, &cfg.implicit).map_err(ctx)?;
                    let (penalty, penalty_grad) = if with_penalty {
                        let (p, g) = hessian_penalty_gradient(&model, &den.x, *sigma, cfg.mu, cfg.power_iters)
                            .map_err(ctx)?;
                        (p, Some(g))
                    } else {
                        (0.0, None)
                    };
                    Ok(ElementResult { loss: diff.norm_sqr(), grad: pg.grad, penalty, penalty_grad })
                })
                .collect();
            let inv = 1.0 / cfg.batch_size as f64;
            let mut grad = vec![0.0; model.param_count()];
            let (mut loss, mut penalty) = (0.0, 0.0);
            for r in results {
                let r = r?;
                loss += r.loss * inv;
                penalty += r.penalty * inv;
                grad.iter_mut().zip(&r.grad).for_each(|(g, v)| *g += v * inv);
                if let Some(pg) = r.penalty_grad {
                    grad.iter_mut().zip(&pg).for_each(|(g, v)| *g += v * inv);
                }
            }
            let mut params = model.parameters();
            adabelief_step(&mut opt, &mut params, &grad, lr)?;
            model.set_parameters(&params)?;
            history.push(LossRow {
                step,
                epoch,
                loss,
                penalty,
                lr,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            log::info!("epoch {epoch} step {step}: loss {loss:.6e} penalty {penalty:.3e} lr {lr:.3e}");
            epoch_sum += loss;
            step += 1;
        }
        epoch_loss.push(epoch_sum / steps_per_epoch as f64);
        lr *= cfg.lr_decay;
        on_epoch(epoch, &model)?;
    }
    Ok(TrainingOutcome { model, history, epoch_loss })
}
