//! Bound-constrained nonlinear least squares.
//!
//! A scaled Levenberg-Marquardt trust region (diagonal scaling from the
//! Jacobian column norms, as in MINPACK) restricted to the free variables:
//! a variable on a bound whose gradient points out of the box is frozen for
//! the iteration, and trial points are projected back into the box.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    check_problem, starting_angles, EstimateReport, EstimationError, EstimationProblem,
    IterationRecord, Method, Status, Warning, POSITIVE_FLOOR,
};
use crate::error::ModelError;
use crate::grid_model::{build_admittance, LineParams};
use crate::linalg::PivotedQr;
use crate::power_flow::SlackRows;
use crate::sensitivity::{assemble_with_model, stacked_residual, AngleRegime, UnknownLayout};

const ACCEPT_RATIO: f64 = 1e-4;

/// Minimizes `Σ_t Σ_k (ΔP_k^t)² + (ΔQ_k^t)²` subject to `R, X ≥ ε` and
/// `θ ∈ [−π, π]`, with the slack angle of every snapshot fixed at zero.
///
/// With phasor data the angles are held at their measured values and only
/// the line parameters are free.
pub fn estimate_bounded_ls(problem: &EstimationProblem) -> Result<EstimateReport, EstimationError> {
    check_problem(problem)?;
    let started = Instant::now();
    let topo = &problem.topology;
    let snapshots = &problem.snapshots;
    let cfg = &problem.config;
    if cfg.regime == AngleRegime::Rms && snapshots.len() < 2 {
        return Err(EstimationError::InvalidProblem(
            "RMS-only least squares needs at least two snapshots".into(),
        ));
    }
    let rows = cfg.slack_rows.unwrap_or(SlackRows::Keep);

    let (thetas0, mut warnings) = starting_angles(problem)?;
    let layout = UnknownLayout::new(topo, snapshots.len(), cfg.regime);
    let n = layout.len();
    let (lower, upper) = bounds(&layout, cfg.enforce_bounds);
    let labels = layout.labels(topo, snapshots);

    let evaluate = |x: &DVector<f64>| -> Result<Evaluated, ModelError> {
        let (params, thetas) = layout.unpack(topo, x, &thetas0);
        let model = build_admittance(topo, &params)?;
        let residual = stacked_residual(topo, &model, snapshots, &thetas, rows);
        let jacobian = assemble_with_model(topo, &params, &model, snapshots, &thetas, cfg.regime, rows)?;
        Ok(Evaluated {
            params,
            thetas,
            residual,
            jacobian,
        })
    };

    let mut x = layout.pack(topo, &problem.initial, &thetas0);
    project(&mut x, &lower, &upper);
    let mut current = evaluate(&x)?;
    let mut cost = 0.5 * current.residual.norm_squared();

    let mut scale: Vec<f64> = column_norms(&current.jacobian)
        .into_iter()
        .map(|c| if c > 0.0 { c } else { 1.0 })
        .collect();
    let scaled_x = scaled_norm(&x, &scale);
    let mut radius = if scaled_x > 0.0 {
        cfg.trust_radius * scaled_x
    } else {
        cfg.trust_radius
    };

    let mut trace = Vec::new();
    let mut status = Status::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        let gradient = current.jacobian.tr_mul(&current.residual);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let pinned_low = x[i] <= lower[i] && gradient[i] > 0.0;
                let pinned_high = x[i] >= upper[i] && gradient[i] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();

        let mut step = DVector::zeros(n);
        let mut lambda = 0.0;
        let mut rc = None;
        if !free.is_empty() {
            let jf = current.jacobian.select_columns(&free);
            let df: Vec<f64> = free.iter().map(|&i| scale[i]).collect();
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| gradient[i]));
            let qr = PivotedQr::new(jf.clone());
            rc = Some(qr.diagonal_ratio());
            let rank = qr.rank(qr.default_rtol());
            let mut p = qr.solve_least_squares(&(-&current.residual), rank);
            let gn_fits = rank == free.len() && scaled_norm(&p, &df) <= 1.1 * radius;
            if !gn_fits {
                let (lm, lm_lambda) = levenberg_step(&jf, &gf, &df, radius);
                p = lm;
                lambda = lm_lambda;
            }
            for (pos, &i) in free.iter().enumerate() {
                step[i] = p[pos];
            }
        }

        let mut trial = &x + &step;
        project(&mut trial, &lower, &upper);
        let step = &trial - &x;
        let step_norm = step.amax();
        let js = &current.jacobian * &step;
        let predicted = -(gradient.dot(&step) + 0.5 * js.norm_squared());

        let candidate = evaluate(&trial).ok().filter(|e| e.residual.iter().all(|v| v.is_finite()));
        let trial_cost = candidate
            .as_ref()
            .map_or(f64::INFINITY, |e| 0.5 * e.residual.norm_squared());
        let actual = cost - trial_cost;
        let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };
        let accepted = actual > 0.0 && ratio > ACCEPT_RATIO;

        trace.push(IterationRecord {
            iteration,
            step_norm,
            residual_norm: (2.0 * cost).sqrt(),
            rcond: rc,
            accepted,
        });

        let scaled_step = scaled_norm(&step, &scale);
        if ratio < 0.25 {
            radius = 0.25 * if scaled_step > 0.0 { scaled_step.min(radius) } else { radius };
        } else if ratio > 0.75 {
            radius = radius.max(2.0 * scaled_step);
        }

        let negligible = predicted <= 1e-14 * cost || cost == 0.0;
        if accepted {
            x = trial;
            current = candidate.expect("accepted steps have finite residuals");
            cost = trial_cost;
            for (s, c) in scale.iter_mut().zip(column_norms(&current.jacobian)) {
                *s = s.max(c);
            }
        }
        if step_norm <= cfg.tolerance && lambda == 0.0 && (accepted || negligible) {
            status = Status::Converged;
            break;
        }
        if radius <= 1e-15 * scaled_norm(&x, &scale).max(1e-300) {
            status = Status::Stalled;
            break;
        }
    }

    if status == Status::Converged {
        for i in 0..n {
            if x[i] <= lower[i] || x[i] >= upper[i] {
                log::warn!("{} sits on its bound", labels[i]);
                warnings.push(Warning::BoundActive {
                    unknown: labels[i].clone(),
                });
            }
        }
    }

    let report = EstimateReport {
        method: Method::BoundedLs,
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

struct Evaluated {
    params: LineParams,
    thetas: Vec<Vec<f64>>,
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
}

fn bounds(layout: &UnknownLayout, enforce: bool) -> (Vec<f64>, Vec<f64>) {
    let n = layout.len();
    if !enforce {
        return (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]);
    }
    let params = 2 * layout.lines;
    let lower = (0..n)
        .map(|i| if i < params { POSITIVE_FLOOR } else { -std::f64::consts::PI })
        .collect();
    let upper = (0..n)
        .map(|i| if i < params { f64::INFINITY } else { std::f64::consts::PI })
        .collect();
    (lower, upper)
}

fn project(x: &mut DVector<f64>, lower: &[f64], upper: &[f64]) {
    for (i, v) in x.iter_mut().enumerate() {
        *v = v.clamp(lower[i], upper[i]);
    }
}

fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

fn scaled_norm(v: &DVector<f64>, scale: &[f64]) -> f64 {
    v.iter()
        .zip(scale)
        .map(|(a, d)| (a * d) * (a * d))
        .sum::<f64>()
        .sqrt()
}

/// Solves `min ‖J p + f‖² + λ‖D p‖²` with `λ > 0` chosen so that
/// `‖D p‖ ≈ radius`, using Moré's safeguarded Newton iteration on `λ`.
fn levenberg_step(
    jac: &DMatrix<f64>,
    gradient: &DVector<f64>,
    scale: &[f64],
    radius: f64,
) -> (DVector<f64>, f64) {
    let n = jac.ncols();
    let normal = jac.tr_mul(jac);
    let d2 = DVector::from_iterator(n, scale.iter().map(|d| d * d));
    let scaled_gradient = gradient
        .iter()
        .zip(scale)
        .map(|(g, d)| (g / d) * (g / d))
        .sum::<f64>()
        .sqrt();
    let mut hi = scaled_gradient / radius;
    let mut lo = 0.0_f64;
    let mut lambda = 1e-3 * hi;
    let mut best = (DVector::zeros(n), hi);

    for _ in 0..60 {
        if !(lambda > lo && lambda < hi) {
            lambda = (lo * hi).sqrt().max(1e-3 * hi);
        }
        let mut shifted = normal.clone();
        for i in 0..n {
            shifted[(i, i)] += lambda * d2[i];
        }
        let Some(chol) = shifted.cholesky() else {
            lo = lambda;
            lambda = 0.0;
            continue;
        };
        let p = chol.solve(&(-gradient));
        let dp = DVector::from_iterator(n, p.iter().zip(scale).map(|(a, d)| a * d));
        let dnorm = dp.norm();
        let phi = dnorm - radius;
        best = (p, lambda);
        if phi.abs() <= 0.1 * radius || dnorm == 0.0 {
            break;
        }
        if phi > 0.0 {
            lo = lo.max(lambda);
        } else {
            hi = hi.min(lambda);
        }
        let rhs = DVector::from_iterator(n, dp.iter().zip(scale).map(|(a, d)| a * d / dnorm));
        let q = chol
            .l()
            .solve_lower_triangular(&rhs)
            .unwrap_or_else(|| DVector::zeros(n));
        let qn = q.norm_squared();
        if qn > 0.0 {
            lambda += (dnorm * dnorm / qn) * (phi / radius);
        } else {
            lambda = 0.0;
        }
    }
    best
}
