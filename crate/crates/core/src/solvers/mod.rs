//! Optimization and Krylov engines.

mod condat;
mod fista;
mod minres;
mod nmapg;
mod objective;
mod power;
pub mod vecops;

pub use condat::{condat_tv_reconstruct, gradient_3d, gradient_adjoint_3d, project_dual, tv_value, TvResult};
pub use fista::{fista_minimize, soft_threshold, FistaResult};
pub use minres::{check_symmetry, minres_solve, MinresResult};
pub use nmapg::{nmapg_minimize, write_trace_csv, NmapgResult, SolverConfig, SolverState, TraceRow};
pub use objective::{FnObjective, Objective};
pub use power::{power_iteration_norm, PowerResult, DEFAULT_POWER_SEED};
