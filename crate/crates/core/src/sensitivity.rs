//! Analytical derivatives of the power-balance residuals with respect to
//! line resistance, line reactance and (without phasor data) voltage angles.
//!
//! The derivative of every admittance entry is pushed through its polar
//! form `|Y_kj| ∠ φ_kj`, so the residual derivative for line `l` is
//!
//! ```text
//! ∂ΔP_k/∂R_l = Σ_j |V_k||V_j| ( ∂|Y_kj|/∂R_l · cos(θ_k − θ_j − φ_kj)
//!                              + |Y_kj| · sin(θ_k − θ_j − φ_kj) · ∂φ_kj/∂R_l )
//! ∂ΔQ_k/∂R_l = Σ_j |V_k||V_j| ( ∂|Y_kj|/∂R_l · sin(θ_k − θ_j − φ_kj)
//!                              − |Y_kj| · cos(θ_k − θ_j − φ_kj) · ∂φ_kj/∂R_l )
//! ```
//!
//! and the same with `∂Y/∂X = j ∂Y/∂R` for the reactances. Only the two
//! endpoints of line `l` see a nonzero `∂Y/∂R_l`, which keeps assembly local.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grid_model::{build_admittance, check_params, AdmittanceModel, GridTopology, LineParams};
use crate::power_flow::{admittance_row, mismatch_with_model, residual_nodes, Snapshot, SlackRows};

/// Whether voltage angles are measured (phasor units) or unknown (RMS only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleRegime {
    Pmu,
    Rms,
}

/// Column ordering of the unknown vector:
/// `[R_1..R_L, X_1..X_L, θ^{t_1}_{non-slack}.., θ^{t_2}_{non-slack}.., ..]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownLayout {
    pub lines: usize,
    pub angle_blocks: usize,
    pub block_len: usize,
}

impl UnknownLayout {
    pub fn new(topo: &GridTopology, snapshots: usize, regime: AngleRegime) -> Self {
        Self {
            lines: topo.line_count(),
            angle_blocks: match regime {
                AngleRegime::Pmu => 0,
                AngleRegime::Rms => snapshots,
            },
            block_len: topo.node_count() - 1,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.lines + self.angle_blocks * self.block_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r_col(&self, line: usize) -> usize {
        line
    }

    pub fn x_col(&self, line: usize) -> usize {
        self.lines + line
    }

    pub fn theta_col(&self, snapshot: usize, reduced: usize) -> usize {
        2 * self.lines + snapshot * self.block_len + reduced
    }

    /// Packs parameters and (for RMS) the non-slack angles of every snapshot.
    pub fn pack(&self, topo: &GridTopology, params: &LineParams, thetas: &[Vec<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for l in 0..self.lines {
            x[self.r_col(l)] = params.r[l];
            x[self.x_col(l)] = params.x[l];
        }
        for t in 0..self.angle_blocks {
            for (pos, &k) in topo.non_slack_nodes().iter().enumerate() {
                x[self.theta_col(t, pos)] = thetas[t][k];
            }
        }
        x
    }

    /// Inverse of [`UnknownLayout::pack`]. Angles not carried by `x` (the
    /// slack, or everything in the PMU regime) are taken from `thetas`.
    pub fn unpack(
        &self,
        topo: &GridTopology,
        x: &DVector<f64>,
        thetas: &[Vec<f64>],
    ) -> (LineParams, Vec<Vec<f64>>) {
        let params = LineParams {
            r: (0..self.lines).map(|l| x[self.r_col(l)]).collect(),
            x: (0..self.lines).map(|l| x[self.x_col(l)]).collect(),
        };
        let mut out = thetas.to_vec();
        for (t, theta) in out.iter_mut().enumerate().take(self.angle_blocks) {
            for (pos, &k) in topo.non_slack_nodes().iter().enumerate() {
                theta[k] = x[self.theta_col(t, pos)];
            }
        }
        (params, out)
    }

    pub fn labels(&self, topo: &GridTopology, snapshots: &[Snapshot]) -> Vec<String> {
        let mut labels: Vec<String> = (1..=self.lines).map(|l| format!("R{l}")).collect();
        labels.extend((1..=self.lines).map(|l| format!("X{l}")));
        for snap in snapshots.iter().take(self.angle_blocks) {
            for &k in topo.non_slack_nodes() {
                labels.push(format!("theta[{}]@{}", snap.label, k + 1));
            }
        }
        labels
    }
}

/// Dense Jacobian with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<String>,
}

impl JacobianMatrix {
    /// CSV dump with the column labels as header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in self.matrix.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// `∂(1/(R + jX))/∂R = (X² − R² + j2XR) / (R² + X²)²`.
pub fn series_derivative(r: f64, x: f64) -> Complex<f64> {
    let denom = r * r + x * x;
    Complex::new(x * x - r * r, 2.0 * x * r) / (denom * denom)
}

fn line_derivative(
    topo: &GridTopology,
    params: &LineParams,
    line: usize,
    rotate: bool,
) -> Result<DMatrix<Complex<f64>>, ModelError> {
    check_params(topo, params)?;
    if line >= topo.line_count() {
        return Err(ModelError::DimensionMismatch {
            what: "line index",
            expected: topo.line_count(),
            found: line + 1,
        });
    }
    let n = topo.node_count();
    let mut d = series_derivative(params.r[line], params.x[line]);
    if rotate {
        d *= Complex::new(0.0, 1.0);
    }
    let ends = topo.lines()[line];
    let mut out = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    out[(ends.top, ends.top)] = d;
    out[(ends.bottom, ends.bottom)] = d;
    out[(ends.top, ends.bottom)] = -d;
    out[(ends.bottom, ends.top)] = -d;
    Ok(out)
}

/// `∂Y/∂R_l`, nonzero only on the endpoint block of line `l`.
pub fn dy_dr(
    topo: &GridTopology,
    params: &LineParams,
    line: usize,
) -> Result<DMatrix<Complex<f64>>, ModelError> {
    line_derivative(topo, params, line, false)
}

/// `∂Y/∂X_l = j ∂Y/∂R_l`.
pub fn dy_dx(
    topo: &GridTopology,
    params: &LineParams,
    line: usize,
) -> Result<DMatrix<Complex<f64>>, ModelError> {
    line_derivative(topo, params, line, true)
}

/// Derivatives of `|Y|` and `arg Y` given the derivative `dy` of `y`.
///
/// The angle derivative uses `(ℜY·dℑY − ℑY·dℜY)/|Y|²`, which equals the
/// arctangent chain rule wherever that is defined and stays finite when
/// `ℜY = 0`. Returns `None` when `|Y| = 0`.
pub fn polar_derivatives(y: Complex<f64>, dy: Complex<f64>) -> Option<(f64, f64)> {
    let mag_sq = y.norm_sqr();
    if mag_sq == 0.0 {
        return None;
    }
    let mag = mag_sq.sqrt();
    let d_mag = (y.re * dy.re + y.im * dy.im) / mag;
    let d_angle = (y.re * dy.im - y.im * dy.re) / mag_sq;
    Some((d_mag, d_angle))
}

/// Assembles the stacked Jacobian for a prebuilt admittance model.
///
/// `thetas` holds full-length angle vectors, one per snapshot. Rows come in
/// snapshot blocks of `[ΔP.., ΔQ..]` over `residual_nodes(topo, rows)`.
pub fn assemble_with_model(
    topo: &GridTopology,
    params: &LineParams,
    model: &AdmittanceModel,
    snapshots: &[Snapshot],
    thetas: &[Vec<f64>],
    regime: AngleRegime,
    rows: SlackRows,
) -> Result<DMatrix<f64>, ModelError> {
    let layout = UnknownLayout::new(topo, snapshots.len(), regime);
    let nodes = residual_nodes(topo, rows);
    let m = nodes.len();
    let mut jac = DMatrix::zeros(2 * m * snapshots.len(), layout.len());
    let slope: Vec<Complex<f64>> = (0..topo.line_count())
        .map(|l| series_derivative(params.r[l], params.x[l]))
        .collect();
    let rot = Complex::new(0.0, 1.0);

    for (t, snap) in snapshots.iter().enumerate() {
        let theta = &thetas[t];
        let v = &snap.vmag;
        let base = 2 * m * t;
        for (pos, &k) in nodes.iter().enumerate() {
            let (row_p, row_q) = (base + pos, base + m + pos);
            let neighbours = admittance_row(topo, k);
            // (j, |V_k||V_j|, cos, sin) over the admittance row of k
            let terms: Vec<(usize, f64, f64, f64)> = neighbours
                .iter()
                .map(|&j| {
                    let arg = theta[k] - theta[j] - model.angle[(k, j)];
                    (j, v[k] * v[j], arg.cos(), arg.sin())
                })
                .collect();

            for &l in topo.lines_at(k) {
                let line = topo.lines()[l];
                let other = if line.top == k { line.bottom } else { line.top };
                for (col, dy_line) in [
                    (layout.r_col(l), slope[l]),
                    (layout.x_col(l), slope[l] * rot),
                ] {
                    let (mut dp, mut dq) = (0.0, 0.0);
                    for &(j, vv, c, s) in &terms {
                        let dy = if j == k {
                            dy_line
                        } else if j == other {
                            -dy_line
                        } else {
                            continue;
                        };
                        let (d_mag, d_angle) = polar_derivatives(model.y[(k, j)], dy)
                            .ok_or(ModelError::DegeneratePolar { row: k, col: j })?;
                        let mag = model.magnitude[(k, j)];
                        dp += vv * (d_mag * c + mag * s * d_angle);
                        dq += vv * (d_mag * s - mag * c * d_angle);
                    }
                    jac[(row_p, col)] = dp;
                    jac[(row_q, col)] = dq;
                }
            }

            if regime == AngleRegime::Rms {
                let (mut dp_self, mut dq_self) = (0.0, 0.0);
                for &(j, vv, c, s) in terms.iter().skip(1) {
                    let mag = model.magnitude[(k, j)];
                    dp_self -= vv * mag * s;
                    dq_self += vv * mag * c;
                    if let Some(pos_j) = topo.reduced_index(j) {
                        let col = layout.theta_col(t, pos_j);
                        jac[(row_p, col)] = vv * mag * s;
                        jac[(row_q, col)] = -vv * mag * c;
                    }
                }
                if let Some(pos_k) = topo.reduced_index(k) {
                    let col = layout.theta_col(t, pos_k);
                    jac[(row_p, col)] = dp_self;
                    jac[(row_q, col)] = dq_self;
                }
            }
        }
    }
    Ok(jac)
}

/// Resolves the angle vectors used for each snapshot: explicit estimates
/// when given, else the measured angles.
pub fn resolve_thetas(
    topo: &GridTopology,
    snapshots: &[Snapshot],
    estimates: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let n = topo.node_count();
    let out: Vec<Vec<f64>> = match estimates {
        Some(est) => {
            if est.len() != snapshots.len() {
                return Err(ModelError::DimensionMismatch {
                    what: "angle estimate blocks",
                    expected: snapshots.len(),
                    found: est.len(),
                });
            }
            est.to_vec()
        }
        None => snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| s.theta.clone().ok_or(ModelError::MissingAngles { snapshot: i }))
            .collect::<Result<_, _>>()?,
    };
    if let Some(bad) = out.iter().find(|t| t.len() != n) {
        return Err(ModelError::DimensionMismatch {
            what: "voltage angles",
            expected: n,
            found: bad.len(),
        });
    }
    Ok(out)
}

/// Jacobian of the stacked non-slack residuals.
///
/// In the RMS regime `theta_estimates` must supply one angle vector per
/// snapshot; in the PMU regime they default to the measured angles.
pub fn assemble_jacobian(
    topo: &GridTopology,
    params: &LineParams,
    snapshots: &[Snapshot],
    regime: AngleRegime,
    theta_estimates: Option<&[Vec<f64>]>,
) -> Result<JacobianMatrix, ModelError> {
    if regime == AngleRegime::Rms && theta_estimates.is_none() {
        return Err(ModelError::MissingAngles { snapshot: 0 });
    }
    for snap in snapshots {
        snap.check(topo)?;
    }
    let thetas = resolve_thetas(topo, snapshots, theta_estimates)?;
    let model = build_admittance(topo, params)?;
    let matrix = assemble_with_model(
        topo,
        params,
        &model,
        snapshots,
        &thetas,
        regime,
        SlackRows::Drop,
    )?;
    let columns = UnknownLayout::new(topo, snapshots.len(), regime).labels(topo, snapshots);
    Ok(JacobianMatrix { matrix, columns })
}

/// Residuals of all snapshots stacked in Jacobian row order.
pub fn stacked_residual(
    topo: &GridTopology,
    model: &AdmittanceModel,
    snapshots: &[Snapshot],
    thetas: &[Vec<f64>],
    rows: SlackRows,
) -> DVector<f64> {
    let block = 2 * residual_nodes(topo, rows).len();
    let mut out = DVector::zeros(block * snapshots.len());
    for (t, snap) in snapshots.iter().enumerate() {
        let r = mismatch_with_model(topo, model, snap, &thetas[t], rows);
        out.rows_mut(t * block, block).copy_from(&r);
    }
    out
}

/// Outcome of comparing an analytical Jacobian with finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_row: usize,
    pub worst_col: usize,
    pub worst_label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub compared: usize,
    pub step: f64,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Entries smaller than this (per-unit) are compared in absolute terms.
/// Central differences carry roundoff of order `ε · |ΔP terms| / step`,
/// which swamps a purely relative test on small entries.
pub const FD_UNIT_SCALE: f64 = 1.0;

/// Central-difference Jacobian of the stacked non-slack residuals.
pub fn numeric_jacobian(
    topo: &GridTopology,
    params: &LineParams,
    snapshots: &[Snapshot],
    regime: AngleRegime,
    thetas: &[Vec<f64>],
    step: f64,
) -> Result<DMatrix<f64>, ModelError> {
    let layout = UnknownLayout::new(topo, snapshots.len(), regime);
    let x0 = layout.pack(topo, params, thetas);
    let eval = |x: &DVector<f64>| -> Result<DVector<f64>, ModelError> {
        let (p, th) = layout.unpack(topo, x, thetas);
        let model = build_admittance(topo, &p)?;
        Ok(stacked_residual(topo, &model, snapshots, &th, SlackRows::Drop))
    };
    let rows = eval(&x0)?.len();
    let mut out = DMatrix::zeros(rows, layout.len());
    for col in 0..layout.len() {
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[col] += step;
        minus[col] -= step;
        let diff = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        out.set_column(col, &diff);
    }
    Ok(out)
}

/// Entrywise error `|a − f| / max(|a|, |f|, FD_UNIT_SCALE)`.
pub fn compare_jacobians(analytic: &JacobianMatrix, numeric: &DMatrix<f64>, step: f64) -> FdReport {
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_row: 0,
        worst_col: 0,
        worst_label: analytic.columns.first().cloned().unwrap_or_default(),
        analytic: 0.0,
        numeric: 0.0,
        compared: 0,
        step,
    };
    for col in 0..analytic.matrix.ncols() {
        for row in 0..analytic.matrix.nrows() {
            let (a, f) = (analytic.matrix[(row, col)], numeric[(row, col)]);
            report.compared += 1;
            let err = (a - f).abs() / a.abs().max(f.abs()).max(FD_UNIT_SCALE);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_row = row;
                report.worst_col = col;
                report.worst_label = analytic.columns[col].clone();
                report.analytic = a;
                report.numeric = f;
            }
        }
    }
    report
}

/// Checks [`assemble_jacobian`] against central differences with `step`.
pub fn fd_check(
    topo: &GridTopology,
    params: &LineParams,
    snapshots: &[Snapshot],
    regime: AngleRegime,
    theta_estimates: Option<&[Vec<f64>]>,
    step: f64,
) -> Result<FdReport, ModelError> {
    let analytic = assemble_jacobian(topo, params, snapshots, regime, theta_estimates)?;
    let thetas = resolve_thetas(topo, snapshots, theta_estimates)?;
    let numeric = numeric_jacobian(topo, params, snapshots, regime, &thetas, step)?;
    Ok(compare_jacobians(&analytic, &numeric, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::build_topology;

    #[test]
    fn unit_resistance_slope() {
        let topo = build_topology(&[(0, 1)], 0).unwrap();
        let d = dy_dr(&topo, &LineParams::uniform(1, 1.0, 0.0), 0).unwrap();
        assert_eq!(d[(0, 0)], Complex::new(-1.0, 0.0));
        assert_eq!(d[(0, 1)], Complex::new(1.0, 0.0));
    }

    #[test]
    fn endpoint_block_signs_and_rotation() {
        let topo = build_topology(&[(0, 1), (1, 2), (1, 3)], 0).unwrap();
        let params = LineParams::new(vec![0.1, 0.2, 0.3], vec![0.05, 0.4, 0.1]).unwrap();
        let dr = dy_dr(&topo, &params, 1).unwrap();
        let dx = dy_dx(&topo, &params, 1).unwrap();
        assert_eq!(dr[(1, 1)], dr[(2, 2)]);
        assert_eq!(dr[(1, 1)], -dr[(1, 2)]);
        assert_eq!(dr[(2, 1)], dr[(1, 2)]);
        for k in 0..4 {
            for j in 0..4 {
                assert_eq!(dx[(k, j)], dr[(k, j)] * Complex::new(0.0, 1.0));
                let touched = (k == 1 || k == 2) && (j == 1 || j == 2);
                assert_eq!(dr[(k, j)] != Complex::new(0.0, 0.0), touched);
            }
        }
    }

    #[test]
    fn polar_derivative_examples() {
        assert_eq!(
            polar_derivatives(Complex::new(1.0, 0.0), Complex::new(1.0, 0.0)),
            Some((1.0, 0.0))
        );
        assert_eq!(
            polar_derivatives(Complex::new(0.0, 1.0), Complex::new(1.0, 0.0)),
            Some((0.0, -1.0))
        );
        assert_eq!(polar_derivatives(Complex::new(0.0, 0.0), Complex::new(1.0, 0.0)), None);
    }

    #[test]
    fn dimension_and_label_layout() {
        let topo = build_topology(&[(0, 1), (1, 2), (2, 3)], 0).unwrap();
        let layout = UnknownLayout::new(&topo, 2, AngleRegime::Rms);
        assert_eq!(layout.len(), 6 + 2 * 3);
        assert_eq!(layout.theta_col(1, 0), 9);
        let snaps: Vec<Snapshot> = ["a", "b"]
            .iter()
            .map(|l| Snapshot {
                label: l.to_string(),
                p: vec![0.0; 4],
                q: vec![0.0; 4],
                vmag: vec![1.0; 4],
                theta: None,
            })
            .collect();
        let labels = layout.labels(&topo, &snaps);
        assert_eq!(labels[0], "R1");
        assert_eq!(labels[5], "X3");
        assert_eq!(labels[9], "theta[b]@2");
    }

    #[test]
    fn zero_impedance_propagates_from_fd_check() {
        let topo = build_topology(&[(0, 1)], 0).unwrap();
        let snap = Snapshot {
            label: "t".into(),
            p: vec![0.0, 0.1],
            q: vec![0.0, 0.1],
            vmag: vec![1.0, 1.0],
            theta: Some(vec![0.0, 0.01]),
        };
        let err = fd_check(
            &topo,
            &LineParams::uniform(1, 0.0, 0.0),
            &[snap],
            AngleRegime::Pmu,
            None,
            1e-7,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::ZeroImpedance { line: 0 });
    }
}
