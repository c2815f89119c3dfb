//! Variational reconstruction of complex-valued 3D volumes from undersampled
//! non-Cartesian multi-coil k-space data, regularized by a trainable
//! rotation-averaged weakly convex ridge regularizer (WCRR).

pub mod baselines;
pub mod error;
pub mod fft;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod rotation;
pub mod solvers;
pub mod training;
pub mod volume;
pub mod wcrr;

pub use error::{Error, Result};
pub use volume::{ComplexVolume, Dims};
