//! Line-parameter estimators.
//!
//! * [`estimate_nr_square`]: Newton-Raphson on the square system built from
//!   one phasor snapshot.
//! * [`estimate_nr_rms`]: Newton-Raphson on two RMS-only snapshots, with the
//!   non-slack voltage angles of both snapshots as extra unknowns.
//! * [`estimate_nr_ls`]: Gauss-Newton on an overdetermined stack of snapshots.
//! * [`estimate_bounded_ls`]: trust-region least squares with `R, X ≥ ε`
//!   and `θ ∈ [−π, π]`.
//!
//! All estimators share the unknown ordering of
//! [`UnknownLayout`](crate::sensitivity::UnknownLayout) and report through
//! [`EstimateReport`].

mod bounded;
mod newton;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::grid_model::{GridTopology, LineParams};
use crate::power_flow::{solve_load_flow, LoadFlowConfig, SlackRows, Snapshot};
use crate::sensitivity::AngleRegime;

pub use bounded::estimate_bounded_ls;
pub use newton::{estimate_nr_ls, estimate_nr_rms, estimate_nr_square};

/// Lower bound standing in for the strict `R, X > 0` constraint.
pub const POSITIVE_FLOOR: f64 = 1e-9;

/// Square systems with an RCOND below this are refused as singular.
pub const SINGULAR_RCOND: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NrSquare,
    NrRms,
    NrLs,
    BoundedLs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NrSquare => "nr-square",
            Method::NrRms => "nr-rms",
            Method::NrLs => "nr-ls",
            Method::BoundedLs => "bounded-ls",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nr-square" => Ok(Method::NrSquare),
            "nr-rms" => Ok(Method::NrRms),
            "nr-ls" => Ok(Method::NrLs),
            "bounded-ls" => Ok(Method::BoundedLs),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Newton step size `α ∈ (0, 1]`.
    pub step_size: f64,
    /// Tolerance on `‖Δx‖∞`, per-unit.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub regime: AngleRegime,
    /// Bounded solver only: enforce `R, X ≥ ε` and `θ ∈ [−π, π]`.
    pub enforce_bounds: bool,
    /// Bounded solver only: initial trust radius as a multiple of the
    /// scaled norm of the starting point.
    pub trust_radius: f64,
    /// Residual rows used by the least-squares estimators. `None` picks the
    /// estimator default: slack rows dropped for Newton, kept for the
    /// bounded objective.
    pub slack_rows: Option<SlackRows>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            tolerance: 1e-6,
            max_iterations: 500,
            regime: AngleRegime::Rms,
            enforce_bounds: true,
            trust_radius: 1.0,
            slack_rows: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(EstimationError::InvalidProblem(format!(
                "step size must lie in (0, 1], got {}",
                self.step_size
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(EstimationError::InvalidProblem(
                "tolerance must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(EstimationError::InvalidProblem(
                "max iterations must be at least 1".into(),
            ));
        }
        if !(self.trust_radius > 0.0) {
            return Err(EstimationError::InvalidProblem(
                "trust radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationProblem {
    pub topology: GridTopology,
    pub snapshots: Vec<Snapshot>,
    /// Starting impedances, e.g. datasheet values, per-unit.
    pub initial: LineParams,
    /// Starting angles per snapshot (full length, slack included). When
    /// absent in the RMS regime they come from a load flow at `initial`.
    pub initial_angles: Option<Vec<Vec<f64>>>,
    pub config: SolverConfig,
}

impl EstimationProblem {
    pub fn new(topology: GridTopology, snapshots: Vec<Snapshot>, initial: LineParams) -> Self {
        Self {
            topology,
            snapshots,
            initial,
            initial_angles: None,
            config: SolverConfig::default(),
        }
    }

    pub fn with_config(mut self, config: SolverConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_initial_angles(mut self, angles: Vec<Vec<f64>>) -> Self {
        self.initial_angles = Some(angles);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIterations,
    Diverged,
    /// Trust region collapsed without meeting a convergence test.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖Δx‖∞` of the computed step (before the step size is applied).
    pub step_norm: f64,
    /// `‖F‖₂` at the start of the iteration.
    pub residual_norm: f64,
    pub rcond: Option<f64>,
    /// Always true for Newton; trust-region steps may be rejected.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Warning {
    /// An unconstrained iterate had some `R_l ≤ 0` or `X_l ≤ 0`.
    NegativeParams { iteration: usize },
    /// The load flow for the initial angles failed; flat angles were used.
    FlatAngleFallback { snapshot: usize },
    /// A solution component sits on one of its bounds.
    BoundActive { unknown: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub status: Status,
    /// Estimated impedances, per-unit.
    pub params: LineParams,
    /// Estimated angles per snapshot in the RMS regime.
    pub angles: Option<Vec<Vec<f64>>>,
    pub trace: Vec<IterationRecord>,
    pub final_residual_norm: f64,
    pub warnings: Vec<Warning>,
    pub wall_time_s: f64,
}

impl EstimateReport {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid estimation problem: {0}")]
    InvalidProblem(String),
    #[error("need {expected} initial angle vectors, got {found}")]
    MissingAngleGuess { expected: usize, found: usize },
    #[error("singular Jacobian at iteration {iteration} (RCOND {rcond:.3e})")]
    SingularJacobian { iteration: usize, rcond: f64 },
    #[error("rank-deficient Jacobian at iteration {iteration}: rank {rank} of {columns}")]
    RankDeficient {
        iteration: usize,
        rank: usize,
        columns: usize,
    },
    #[error("estimator did not converge ({:?} after {} iterations)", .0.status, .0.trace.len())]
    NoConvergence(Box<EstimateReport>),
}

impl EstimationError {
    /// The partial report carried by a non-converged run.
    pub fn report(&self) -> Option<&EstimateReport> {
        match self {
            EstimationError::NoConvergence(r) => Some(r),
            _ => None,
        }
    }
}

/// Angles from a load flow at `params` using the measured injections and the
/// measured slack magnitude.
pub fn load_flow_angles(
    topo: &GridTopology,
    params: &LineParams,
    snapshot: &Snapshot,
) -> Result<Vec<f64>, ModelError> {
    let slack = topo.slack();
    let solved = solve_load_flow(
        topo,
        params,
        &snapshot.p,
        &snapshot.q,
        Complex::new(snapshot.vmag[slack], 0.0),
        &LoadFlowConfig::default(),
    )?;
    Ok(solved.theta)
}

/// Starting angle vectors for every snapshot plus any fallback warnings.
pub(crate) fn starting_angles(
    problem: &EstimationProblem,
) -> Result<(Vec<Vec<f64>>, Vec<Warning>), EstimationError> {
    let topo = &problem.topology;
    let n = topo.node_count();
    let t = problem.snapshots.len();
    match problem.config.regime {
        AngleRegime::Pmu => {
            let thetas = problem
                .snapshots
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.theta
                        .clone()
                        .ok_or(ModelError::MissingAngles { snapshot: i })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((thetas, Vec::new()))
        }
        AngleRegime::Rms => {
            if let Some(given) = &problem.initial_angles {
                if given.len() != t {
                    return Err(EstimationError::MissingAngleGuess {
                        expected: t,
                        found: given.len(),
                    });
                }
                if let Some(bad) = given.iter().find(|g| g.len() != n) {
                    return Err(ModelError::DimensionMismatch {
                        what: "initial angles",
                        expected: n,
                        found: bad.len(),
                    }
                    .into());
                }
                let mut pinned = given.clone();
                for g in &mut pinned {
                    g[topo.slack()] = 0.0;
                }
                return Ok((pinned, Vec::new()));
            }
            let mut warnings = Vec::new();
            let thetas = problem
                .snapshots
                .iter()
                .enumerate()
                .map(|(i, snap)| match load_flow_angles(topo, &problem.initial, snap) {
                    Ok(theta) => theta,
                    Err(err) => {
                        log::warn!("initial load flow for snapshot {i} failed ({err}); using flat angles");
                        warnings.push(Warning::FlatAngleFallback { snapshot: i });
                        vec![0.0; n]
                    }
                })
                .collect();
            Ok((thetas, warnings))
        }
    }
}

pub(crate) fn check_problem(problem: &EstimationProblem) -> Result<(), EstimationError> {
    problem.config.validate()?;
    if problem.snapshots.is_empty() {
        return Err(EstimationError::InvalidProblem("no snapshots".into()));
    }
    for snap in &problem.snapshots {
        snap.check(&problem.topology)?;
    }
    crate::grid_model::check_params(&problem.topology, &problem.initial)?;
    Ok(())
}
