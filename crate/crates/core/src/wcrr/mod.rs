//! Weakly convex ridge regularizer: potentials, filter cascade, evaluation
//! and parameter gradients.

mod filters;
mod model;
mod param_grad;
mod potential;
mod spectral;

pub use filters::{normalize, spectral_norm_fft, ConvLayer, FilterBank, NormWitness};
pub use model::{ModelConfig, RotationPreset, WcrrModel};
pub use param_grad::{grad_inner_param_gradient, hessian_form_param_gradient};
pub use potential::{
    huber, psi, psi_d1, psi_d2, shared_potential, shared_potential_d1, shared_potential_d2, Potentials,
    SplineWeights, DEFAULT_KNOTS, SIGMA_MAX, SIGMA_MIN,
};
pub use spectral::offsets as kernel_offsets;
