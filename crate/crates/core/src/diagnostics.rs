//! Conditioning, robustness and accuracy studies.
//!
//! Every sweep evaluates its grid points independently (in parallel) and
//! returns one [`SweepRecord`] per point, in grid order.

use std::io::Write;

use nalgebra::Complex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{
    estimate_bounded_ls, estimate_nr_ls, load_flow_angles, EstimateReport, EstimationError,
    EstimationProblem, Method, SolverConfig, Status,
};
use crate::grid_model::{GridTopology, LineParams};
use crate::linalg::rcond;
use crate::power_flow::{
    solve_load_flow, synthesize_snapshots, Injection, LoadFlowConfig, NoiseModel, Snapshot,
    SynthesisOptions,
};
use crate::sensitivity::{assemble_jacobian, AngleRegime};

/// RCOND below this counts as numerically singular.
pub const COLLAPSE_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Power ratio `r` between the two snapshots.
    Rcond,
    /// Scale `ρ` of the initial guess relative to the true impedances.
    Rho,
    /// Number of samples handed to the estimators.
    Samples,
}

impl SweepKind {
    pub fn csv_name(self) -> &'static str {
        match self {
            SweepKind::Rcond => "fig2_rcond.csv",
            SweepKind::Samples => "fig3_error_reduction.csv",
            SweepKind::Rho => "fig4_rho_sweep.csv",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rcond" => Ok(SweepKind::Rcond),
            "rho" => Ok(SweepKind::Rho),
            "samples" => Ok(SweepKind::Samples),
            other => Err(format!("unknown sweep `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    /// A plain evaluation (RCOND) succeeded.
    Evaluated,
    Converged,
    NotConverged { status: Status },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Swept value: `r`, `ρ` or the sample count.
    pub value: f64,
    pub method: Option<Method>,
    pub rcond: Option<f64>,
    /// Largest relative resistance error over the lines, as a fraction.
    pub max_r_error: Option<f64>,
    pub max_x_error: Option<f64>,
    /// Voltage error reduction per node, in percent.
    pub error_reduction_pct: Vec<Option<f64>>,
    pub iterations: Option<usize>,
    /// Converged with every parameter within the recovery tolerance.
    pub recovered: Option<bool>,
    pub outcome: Outcome,
}

impl SweepRecord {
    fn blank(value: f64, method: Option<Method>, outcome: Outcome) -> Self {
        Self {
            value,
            method,
            rcond: None,
            max_r_error: None,
            max_x_error: None,
            error_reduction_pct: Vec::new(),
            iterations: None,
            recovered: None,
            outcome,
        }
    }

    /// Mean of the defined per-node reductions.
    pub fn mean_reduction(&self) -> Option<f64> {
        mean_defined(&self.error_reduction_pct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub sweep: SweepKind,
    pub records: Vec<SweepRecord>,
}

impl DiagnosticsReport {
    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &SweepRecord> {
        self.records.iter().filter(move |r| r.method == Some(method))
    }

    /// Median RCOND over the points where it was computed.
    pub fn median_rcond(&self) -> Option<f64> {
        let mut values: Vec<f64> = self.records.iter().filter_map(|r| r.rcond).collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let mid = values.len() / 2;
        Some(if values.len() % 2 == 1 {
            values[mid]
        } else {
            0.5 * (values[mid - 1] + values[mid])
        })
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    /// Plot data: the swept value in the first column, one column per series.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match self.sweep {
            SweepKind::Rcond => {
                w.write_record(["r", "rcond"])?;
                for rec in &self.records {
                    w.write_record([num(rec.value), opt(rec.rcond)])?;
                }
            }
            SweepKind::Rho => {
                let methods = self.methods();
                let mut header = vec!["rho".to_string()];
                for m in &methods {
                    let n = m.name().replace('-', "_");
                    header.push(format!("{n}_max_r_error_pct"));
                    header.push(format!("{n}_max_x_error_pct"));
                    header.push(format!("{n}_recovered"));
                }
                w.write_record(&header)?;
                for (value, group) in self.grouped() {
                    let mut row = vec![num(value)];
                    for m in &methods {
                        let rec = group.iter().find(|r| r.method == Some(*m));
                        row.push(opt(rec.and_then(|r| r.max_r_error).map(|e| 100.0 * e)));
                        row.push(opt(rec.and_then(|r| r.max_x_error).map(|e| 100.0 * e)));
                        row.push(rec.and_then(|r| r.recovered).map_or(String::new(), |b| b.to_string()));
                    }
                    w.write_record(&row)?;
                }
            }
            SweepKind::Samples => {
                let methods = self.methods();
                let nodes = self
                    .records
                    .iter()
                    .map(|r| r.error_reduction_pct.len())
                    .max()
                    .unwrap_or(0);
                let mut header = vec!["samples".to_string()];
                for m in &methods {
                    let n = m.name().replace('-', "_");
                    header.push(format!("{n}_mean_pct"));
                    for k in 0..nodes {
                        header.push(format!("{n}_node{}_pct", k + 1));
                    }
                }
                w.write_record(&header)?;
                for (value, group) in self.grouped() {
                    let mut row = vec![num(value)];
                    for m in &methods {
                        let rec = group.iter().find(|r| r.method == Some(*m));
                        row.push(opt(rec.and_then(|r| r.mean_reduction())));
                        for k in 0..nodes {
                            row.push(opt(rec.and_then(|r| r.error_reduction_pct.get(k).copied().flatten())));
                        }
                    }
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    fn methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Vec::new();
        for m in self.records.iter().filter_map(|r| r.method) {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    fn grouped(&self) -> Vec<(f64, Vec<&SweepRecord>)> {
        let mut out: Vec<(f64, Vec<&SweepRecord>)> = Vec::new();
        for rec in &self.records {
            match out.last_mut() {
                Some((v, group)) if *v == rec.value => group.push(rec),
                _ => out.push((rec.value, vec![rec])),
            }
        }
        out
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), num)
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// `r ∈ [−0.1, 1.1]` in steps of 0.01; hits 0 and 1 exactly.
pub fn default_r_grid() -> Vec<f64> {
    (-10..=110).map(|i| i as f64 / 100.0).collect()
}

/// Four points per decade over `ρ ∈ [0.01, 100]`.
pub fn default_rho_grid() -> Vec<f64> {
    (-8..=8).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

/// Inputs of the power-ratio sweep: measurements are synthesized from
/// `truth`, the Jacobian is evaluated at the first iterate (`initial`
/// impedances, load-flow angles).
#[derive(Debug, Clone, PartialEq)]
pub struct RcondScenario {
    pub topology: GridTopology,
    pub truth: LineParams,
    pub initial: LineParams,
    /// Injections of the unscaled snapshot, per-unit.
    pub base: Injection,
    pub slack_vmag: f64,
    /// Scale the first snapshot instead of the second.
    pub scale_first: bool,
}

impl RcondScenario {
    pub fn new(topology: GridTopology, truth: LineParams, initial: LineParams, base: Injection) -> Self {
        Self {
            topology,
            truth,
            initial,
            base,
            slack_vmag: 1.0,
            scale_first: false,
        }
    }

    /// RCOND of the two-snapshot RMS Jacobian at power ratio `r`.
    pub fn rcond_at(&self, r: f64) -> Result<f64, String> {
        let scaled = Injection {
            label: "scaled".into(),
            p: self.base.p.iter().map(|v| r * v).collect(),
            q: self.base.q.iter().map(|v| r * v).collect(),
        };
        let schedule = if self.scale_first {
            vec![scaled, self.base.clone()]
        } else {
            vec![self.base.clone(), scaled]
        };
        let options = SynthesisOptions {
            slack_vmag: self.slack_vmag,
            ..SynthesisOptions::default()
        };
        let topo = &self.topology;
        let snapshots = synthesize_snapshots(topo, &self.truth, &schedule, &NoiseModel::noiseless(), &options)
            .map_err(|e| e.to_string())?;
        let thetas = snapshots
            .iter()
            .map(|s| load_flow_angles(topo, &self.initial, s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let jac = assemble_jacobian(topo, &self.initial, &snapshots, AngleRegime::Rms, Some(&thetas))
            .map_err(|e| e.to_string())?;
        Ok(rcond(&jac.matrix))
    }
}

pub fn rcond_sweep(scenario: &RcondScenario, r_grid: &[f64]) -> DiagnosticsReport {
    let records = r_grid
        .par_iter()
        .map(|&r| match scenario.rcond_at(r) {
            Ok(rc) => SweepRecord {
                rcond: Some(rc),
                ..SweepRecord::blank(r, None, Outcome::Evaluated)
            },
            Err(message) => SweepRecord::blank(r, None, Outcome::Failed { message }),
        })
        .collect();
    DiagnosticsReport {
        sweep: SweepKind::Rcond,
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReduction {
    /// `100 · (E_datasheet − E_estimated) / E_datasheet` per node; `None`
    /// where the datasheet error is zero (e.g. the slack node) or no
    /// snapshot could be evaluated.
    pub per_node: Vec<Option<f64>>,
    /// Mean `|V_meas − V_lf|` per node under each parameter set.
    pub datasheet_error: Vec<Option<f64>>,
    pub estimated_error: Vec<Option<f64>>,
    /// Snapshots whose load flow failed under either parameter set.
    pub failed_snapshots: Vec<usize>,
}

impl ErrorReduction {
    pub fn mean(&self) -> Option<f64> {
        mean_defined(&self.per_node)
    }
}

/// Compares load-flow voltages under two parameter sets against the
/// measured magnitudes. Each load flow uses the measured injections and the
/// measured slack magnitude.
pub fn error_reduction(
    topo: &GridTopology,
    datasheet: &LineParams,
    estimated: &LineParams,
    snapshots: &[Snapshot],
) -> ErrorReduction {
    let n = topo.node_count();
    let slack = topo.slack();
    let config = LoadFlowConfig::default();
    let mut sum_ds = vec![0.0; n];
    let mut sum_est = vec![0.0; n];
    let mut used = 0usize;
    let mut failed = Vec::new();
    for (i, snap) in snapshots.iter().enumerate() {
        let run = |params: &LineParams| {
            solve_load_flow(topo, params, &snap.p, &snap.q, Complex::new(snap.vmag[slack], 0.0), &config)
        };
        match (run(datasheet), run(estimated)) {
            (Ok(ds), Ok(est)) => {
                used += 1;
                for k in 0..n {
                    sum_ds[k] += (snap.vmag[k] - ds.vmag[k]).abs();
                    sum_est[k] += (snap.vmag[k] - est.vmag[k]).abs();
                }
            }
            _ => failed.push(i),
        }
    }
    if used == 0 {
        return ErrorReduction {
            per_node: vec![None; n],
            datasheet_error: vec![None; n],
            estimated_error: vec![None; n],
            failed_snapshots: failed,
        };
    }
    let t = used as f64;
    let datasheet_error: Vec<f64> = sum_ds.iter().map(|s| s / t).collect();
    let estimated_error: Vec<f64> = sum_est.iter().map(|s| s / t).collect();
    let per_node = datasheet_error
        .iter()
        .zip(&estimated_error)
        .map(|(&ds, &est)| (ds > 0.0).then(|| 100.0 * (ds - est) / ds))
        .collect();
    ErrorReduction {
        per_node,
        datasheet_error: datasheet_error.into_iter().map(Some).collect(),
        estimated_error: estimated_error.into_iter().map(Some).collect(),
        failed_snapshots: failed,
    }
}

/// Solver settings for the two least-squares estimators in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsConfigs {
    pub nr_ls: SolverConfig,
    pub bounded_ls: SolverConfig,
}

impl Default for LsConfigs {
    fn default() -> Self {
        Self {
            nr_ls: SolverConfig {
                step_size: 0.1,
                max_iterations: 2000,
                ..SolverConfig::default()
            },
            bounded_ls: SolverConfig::default(),
        }
    }
}

impl LsConfigs {
    fn get(&self, method: Method) -> SolverConfig {
        match method {
            Method::BoundedLs => self.bounded_ls,
            _ => self.nr_ls,
        }
    }
}

const LS_METHODS: [Method; 2] = [Method::NrLs, Method::BoundedLs];

fn run_ls(method: Method, problem: &EstimationProblem) -> Result<EstimateReport, EstimationError> {
    match method {
        Method::BoundedLs => estimate_bounded_ls(problem),
        _ => estimate_nr_ls(problem),
    }
}

/// The estimator's report plus the outcome to record. Non-converged runs
/// still carry their last iterate.
fn settle(result: Result<EstimateReport, EstimationError>) -> (Option<EstimateReport>, Outcome) {
    match result {
        Ok(report) => (Some(report), Outcome::Converged),
        Err(EstimationError::NoConvergence(report)) => {
            let status = report.status;
            (Some(*report), Outcome::NotConverged { status })
        }
        Err(err) => (
            None,
            Outcome::Failed {
                message: err.to_string(),
            },
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStudySpec {
    /// Sample counts to evaluate, each in `2..=m`.
    pub counts: Vec<usize>,
    pub shuffle_seed: u64,
    pub solvers: LsConfigs,
}

/// Estimates from the first `count` samples of a seeded shuffle and scores
/// the result with [`error_reduction`] over all samples.
pub fn sample_count_study(
    topo: &GridTopology,
    datasheet: &LineParams,
    snapshots: &[Snapshot],
    spec: &SampleStudySpec,
) -> Result<DiagnosticsReport, EstimationError> {
    let m = snapshots.len();
    if m < 2 {
        return Err(EstimationError::InvalidProblem(format!(
            "sample study needs at least two samples, got {m}"
        )));
    }
    if let Some(bad) = spec.counts.iter().find(|&&c| c < 2 || c > m) {
        return Err(EstimationError::InvalidProblem(format!(
            "sample count {bad} outside 2..={m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));

    let jobs: Vec<(usize, Method)> = spec
        .counts
        .iter()
        .flat_map(|&c| LS_METHODS.iter().map(move |&method| (c, method)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(count, method)| {
            let subset: Vec<Snapshot> = order[..count].iter().map(|&i| snapshots[i].clone()).collect();
            let problem = EstimationProblem::new(topo.clone(), subset, datasheet.clone())
                .with_config(spec.solvers.get(method));
            let (report, outcome) = settle(run_ls(method, &problem));
            let mut rec = SweepRecord::blank(count as f64, Some(method), outcome);
            if let Some(report) = report {
                rec.iterations = Some(report.iterations());
                rec.error_reduction_pct = error_reduction(topo, datasheet, &report.params, snapshots).per_node;
            }
            rec
        })
        .collect();
    Ok(DiagnosticsReport {
        sweep: SweepKind::Samples,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSweepSpec {
    pub rho: Vec<f64>,
    pub solvers: LsConfigs,
    /// Largest relative parameter error that still counts as recovered.
    pub recovery_tolerance: f64,
}

impl Default for RhoSweepSpec {
    fn default() -> Self {
        Self {
            rho: default_rho_grid(),
            solvers: LsConfigs::default(),
            recovery_tolerance: 0.01,
        }
    }
}

/// Runs both least-squares estimators from `ρ · truth` and records the
/// worst relative parameter errors.
pub fn rho_sweep(
    topo: &GridTopology,
    truth: &LineParams,
    snapshots: &[Snapshot],
    spec: &RhoSweepSpec,
) -> DiagnosticsReport {
    let jobs: Vec<(f64, Method)> = spec
        .rho
        .iter()
        .flat_map(|&rho| LS_METHODS.iter().map(move |&method| (rho, method)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(rho, method)| {
            let problem = EstimationProblem::new(topo.clone(), snapshots.to_vec(), truth.scaled(rho))
                .with_config(spec.solvers.get(method));
            let (report, outcome) = settle(run_ls(method, &problem));
            let mut rec = SweepRecord::blank(rho, Some(method), outcome);
            match report {
                Some(report) => {
                    let (er, ex) = report.params.max_relative_errors(truth);
                    let finite = er.is_finite() && ex.is_finite();
                    rec.max_r_error = finite.then_some(er);
                    rec.max_x_error = finite.then_some(ex);
                    rec.iterations = Some(report.iterations());
                    rec.recovered = Some(
                        report.converged()
                            && finite
                            && er < spec.recovery_tolerance
                            && ex < spec.recovery_tolerance,
                    );
                }
                None => rec.recovered = Some(false),
            }
            rec
        })
        .collect();
    DiagnosticsReport {
        sweep: SweepKind::Rho,
        records,
    }
}
