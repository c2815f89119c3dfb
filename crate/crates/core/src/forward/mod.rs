//! Non-Cartesian multi-coil forward model.

mod coils;
mod density;
mod ndft;
mod operator;
mod trajectory;

pub use coils::{synth_coils, CoilSet, SSOS_TOLERANCE};
pub use density::{estimate_density_weights, DensityWeights, DEFAULT_PIPE_ITERATIONS};
pub use ndft::{ndft_adjoint, ndft_forward};
pub use operator::{
    add_noise, adjoint, forward, simulate_acquisition, EncodingOperator, KSpaceData, NoiseModel,
    ToeplitzKernel,
};
pub use trajectory::{generate_trajectory, vds_radius_cdf, KSpaceTrajectory, TrajectoryKind};
