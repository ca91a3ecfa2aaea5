//! Estimation of series line impedances in radial distribution grids from
//! nodal voltage-magnitude and power measurements.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid_model`]: topology, line parameters, admittance matrix, per-unit bases
//! * [`power_flow`]: forward load flow, residuals, measurement synthesis
//! * [`sensitivity`]: analytical Jacobian of the residuals and its finite-difference check
//! * [`estimators`]: Newton-Raphson and bound-constrained least-squares estimators
//! * [`diagnostics`]: conditioning and robustness studies
//! * [`io`], [`scenario`]: file formats and the bundled test district

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod grid_model;
pub mod io;
pub mod linalg;
pub mod power_flow;
pub mod scenario;
pub mod sensitivity;

pub use error::ModelError;
pub use estimators::{
    estimate_bounded_ls, estimate_nr_ls, estimate_nr_rms, estimate_nr_square, EstimateReport,
    EstimationError, EstimationProblem, Method, SolverConfig, Status,
};
pub use grid_model::{build_admittance, build_topology, GridTopology, LineParams, PerUnitBase};
pub use power_flow::{mismatch, solve_load_flow, synthesize_snapshots, NoiseModel, Snapshot};
pub use sensitivity::{assemble_jacobian, fd_check, AngleRegime, JacobianMatrix};
