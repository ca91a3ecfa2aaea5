use std::time::Instant;

use nalgebra::DVector;

use super::{
    check_problem, starting_angles, EstimateReport, EstimationError, EstimationProblem,
    IterationRecord, Method, Status, Warning, SINGULAR_RCOND,
};
use crate::grid_model::{build_admittance, AdmittanceModel, LineParams};
use crate::linalg::{rcond, PivotedQr};
use crate::power_flow::{residual_nodes, SlackRows};
use crate::sensitivity::{assemble_with_model, stacked_residual, AngleRegime, UnknownLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinearSolve {
    /// Partial-pivoting LU on a square Jacobian.
    Square,
    /// Column-pivoted QR least squares.
    LeastSquares,
}

/// Newton-Raphson on one phasor snapshot: `2(N−1)` residuals in `2L` unknowns.
pub fn estimate_nr_square(problem: &EstimationProblem) -> Result<EstimateReport, EstimationError> {
    check_problem(problem)?;
    if problem.config.regime != AngleRegime::Pmu {
        return Err(EstimationError::InvalidProblem(
            "nr-square needs phasor measurements (PMU regime)".into(),
        ));
    }
    if problem.snapshots.len() != 1 {
        return Err(EstimationError::InvalidProblem(format!(
            "nr-square takes exactly one snapshot, got {}",
            problem.snapshots.len()
        )));
    }
    run(problem, Method::NrSquare, LinearSolve::Square, SlackRows::Drop)
}

/// Newton-Raphson on two RMS-only snapshots. Unknowns are the line
/// parameters plus the non-slack angles of both snapshots, `4(N−1)` in all,
/// against the `4(N−1)` non-slack residuals.
pub fn estimate_nr_rms(problem: &EstimationProblem) -> Result<EstimateReport, EstimationError> {
    check_problem(problem)?;
    if problem.config.regime != AngleRegime::Rms {
        return Err(EstimationError::InvalidProblem(
            "nr-rms works on RMS-only data (RMS regime)".into(),
        ));
    }
    if problem.snapshots.len() != 2 {
        return Err(EstimationError::InvalidProblem(format!(
            "nr-rms takes exactly two snapshots, got {}",
            problem.snapshots.len()
        )));
    }
    run(problem, Method::NrRms, LinearSolve::Square, SlackRows::Drop)
}

/// Gauss-Newton: each step minimizes `‖F + J Δx‖₂`.
pub fn estimate_nr_ls(problem: &EstimationProblem) -> Result<EstimateReport, EstimationError> {
    check_problem(problem)?;
    if problem.config.regime == AngleRegime::Rms && problem.snapshots.len() < 2 {
        return Err(EstimationError::InvalidProblem(
            "RMS-only least squares needs at least two snapshots".into(),
        ));
    }
    let rows = problem.config.slack_rows.unwrap_or(SlackRows::Drop);
    run(problem, Method::NrLs, LinearSolve::LeastSquares, rows)
}

struct Iterate {
    params: LineParams,
    thetas: Vec<Vec<f64>>,
    model: AdmittanceModel,
    residual: DVector<f64>,
}

fn run(
    problem: &EstimationProblem,
    method: Method,
    solve: LinearSolve,
    rows: SlackRows,
) -> Result<EstimateReport, EstimationError> {
    let started = Instant::now();
    let topo = &problem.topology;
    let snapshots = &problem.snapshots;
    let cfg = &problem.config;
    let alpha = cfg.step_size;

    let (thetas0, mut warnings) = starting_angles(problem)?;
    let layout = UnknownLayout::new(topo, snapshots.len(), cfg.regime);
    let n_rows = 2 * residual_nodes(topo, rows).len() * snapshots.len();
    match solve {
        LinearSolve::Square if n_rows != layout.len() => {
            return Err(EstimationError::InvalidProblem(format!(
                "system is not square: {n_rows} residuals, {} unknowns",
                layout.len()
            )));
        }
        LinearSolve::LeastSquares if n_rows < layout.len() => {
            return Err(EstimationError::InvalidProblem(format!(
                "underdetermined: {n_rows} residuals, {} unknowns",
                layout.len()
            )));
        }
        _ => {}
    }

    let evaluate = |x: &DVector<f64>| -> Result<Iterate, EstimationError> {
        let (params, thetas) = layout.unpack(topo, x, &thetas0);
        let model = build_admittance(topo, &params)?;
        let residual = stacked_residual(topo, &model, snapshots, &thetas, rows);
        Ok(Iterate {
            params,
            thetas,
            model,
            residual,
        })
    };

    let mut x = layout.pack(topo, &problem.initial, &thetas0);
    let mut current = evaluate(&x)?;
    let mut trace = Vec::new();
    let mut status = Status::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        let jac = assemble_with_model(
            topo,
            &current.params,
            &current.model,
            snapshots,
            &current.thetas,
            cfg.regime,
            rows,
        )?;
        let rhs = -&current.residual;
        let (step, rc) = match solve {
            LinearSolve::Square => {
                let rc = rcond(&jac);
                if !(rc >= SINGULAR_RCOND) {
                    return Err(EstimationError::SingularJacobian { iteration, rcond: rc });
                }
                let step = jac
                    .lu()
                    .solve(&rhs)
                    .ok_or(EstimationError::SingularJacobian { iteration, rcond: rc })?;
                (step, rc)
            }
            LinearSolve::LeastSquares => {
                let columns = jac.ncols();
                let qr = PivotedQr::new(jac);
                let rank = qr.rank(qr.default_rtol());
                if rank < columns {
                    return Err(EstimationError::RankDeficient {
                        iteration,
                        rank,
                        columns,
                    });
                }
                (qr.solve_least_squares(&rhs, rank), qr.diagonal_ratio())
            }
        };

        let step_norm = step.amax();
        let residual_norm = current.residual.norm();
        trace.push(IterationRecord {
            iteration,
            step_norm,
            residual_norm,
            rcond: Some(rc),
            accepted: true,
        });
        if !step_norm.is_finite() {
            status = Status::Diverged;
            break;
        }

        x.axpy(alpha, &step, 1.0);
        let next = match evaluate(&x) {
            Ok(next) if next.residual.iter().all(|v| v.is_finite()) => next,
            _ => {
                status = Status::Diverged;
                break;
            }
        };
        let flagged = warnings
            .iter()
            .any(|w| matches!(w, Warning::NegativeParams { .. }));
        if !flagged && !next.params.is_physical() {
            log::warn!("iteration {iteration}: line parameters left the positive orthant");
            warnings.push(Warning::NegativeParams { iteration });
        }

        // ‖Δx‖∞ small is not enough with α < 1: also require that the
        // residual has stopped shrinking at the rate a damped step predicts.
        let next_norm = next.residual.norm();
        let stagnated = residual_norm == 0.0 || next_norm > (1.0 - 0.5 * alpha) * residual_norm;
        current = next;
        if step_norm <= cfg.tolerance && stagnated {
            status = Status::Converged;
            break;
        }
    }

    let report = EstimateReport {
        method,
        status,
        params: current.params,
        angles: (cfg.regime == AngleRegime::Rms).then_some(current.thetas),
        final_residual_norm: current.residual.norm(),
        trace,
        warnings,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if report.converged() {
        Ok(report)
    } else {
        Err(EstimationError::NoConvergence(Box::new(report)))
    }
}
