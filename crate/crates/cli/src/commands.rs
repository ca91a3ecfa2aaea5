use std::fs;
use std::path::{Path, PathBuf};

use gridline::diagnostics::{
    default_r_grid, default_rho_grid, rcond_sweep, rho_sweep, sample_count_study, DiagnosticsReport, RcondScenario,
    RhoSweepSpec, SampleStudySpec, SweepKind, COLLAPSE_RCOND,
};
use gridline::estimators::load_flow_angles;
use gridline::io::{fingerprint, write_snapshots, ReportFile};
use gridline::linalg::rcond;
use gridline::sensitivity::{compare_jacobians, numeric_jacobian, resolve_thetas, FdReport};
use gridline::{
    assemble_jacobian, estimate_bounded_ls, estimate_nr_ls, estimate_nr_rms, estimate_nr_square, AngleRegime,
    EstimationError, EstimationProblem, Method, Snapshot,
};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::scenario::Scenario;

/// Largest finite-difference error accepted by `check-jacobian`.
pub const FD_TOLERANCE: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-7;

/// Human-readable progress, silenced by `--quiet`.
pub struct Console {
    pub quiet: bool,
}

impl Console {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn out_path(scenario: &Scenario, name: &str) -> Result<PathBuf, CliError> {
    let dir = scenario.output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::config)?;
    fs::write(path, text + "\n").map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

pub fn simulate(scenario: &Scenario, console: &Console) -> Result<PathBuf, CliError> {
    let snapshots = scenario.simulate()?;
    let path = out_path(scenario, "snapshots.csv")?;
    let file = fs::File::create(&path).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    write_snapshots(file, &snapshots, scenario.base()).map_err(CliError::config)?;
    console.say(format!(
        "{} snapshots x {} nodes -> {}",
        snapshots.len(),
        scenario.topology.node_count(),
        path.display()
    ));
    Ok(path)
}

fn run_estimator(method: Method, problem: &EstimationProblem) -> Result<gridline::EstimateReport, EstimationError> {
    match method {
        Method::NrSquare => estimate_nr_square(problem),
        Method::NrRms => estimate_nr_rms(problem),
        Method::NrLs => estimate_nr_ls(problem),
        Method::BoundedLs => estimate_bounded_ls(problem),
    }
}

fn has_angles(snapshots: &[Snapshot]) -> bool {
    snapshots.iter().all(|s| s.theta.is_some())
}

pub fn estimate(scenario: &Scenario, console: &Console) -> Result<PathBuf, CliError> {
    let method = scenario
        .file
        .method
        .ok_or_else(|| CliError::config("no estimator selected; set `method` or pass --method"))?;
    let snapshots = scenario.snapshots()?;
    let mut config = scenario.file.solver;
    match method {
        Method::NrSquare => {
            if !has_angles(&snapshots) {
                return Err(CliError::config(
                    "nr-square needs voltage angles from phasor measurement units; \
                     the measurements carry magnitudes only (use nr-rms, nr-ls or bounded-ls)",
                ));
            }
            config.regime = AngleRegime::Pmu;
        }
        Method::NrRms => config.regime = AngleRegime::Rms,
        Method::NrLs | Method::BoundedLs => {
            if config.regime == AngleRegime::Pmu && !has_angles(&snapshots) {
                return Err(CliError::config("PMU regime selected but the measurements carry no angles"));
            }
        }
    }
    let problem =
        EstimationProblem::new(scenario.topology.clone(), snapshots.clone(), scenario.datasheet_pu()).with_config(config);
    let path = out_path(scenario, &format!("report_{}.json", method.name()))?;
    match run_estimator(method, &problem) {
        Ok(report) => {
            write_json(&path, &ReportFile::new(&report, &scenario.topology, &config, scenario.base(), &snapshots))?;
            console.say(format!(
                "{}: converged in {} iterations -> {}",
                method.name(),
                report.iterations(),
                path.display()
            ));
            let ohm = report.params.to_ohms(scenario.base());
            for (l, (r, x)) in ohm.r.iter().zip(&ohm.x).enumerate() {
                console.say(format!("  line {}: R = {:.6} ohm, X = {:.6} ohm", l + 1, r, x));
            }
            Ok(path)
        }
        Err(EstimationError::NoConvergence(report)) => {
            write_json(&path, &ReportFile::new(&report, &scenario.topology, &config, scenario.base(), &snapshots))?;
            let mut err = CliError::from(EstimationError::NoConvergence(report));
            err.details["report"] = json!(path.display().to_string());
            Err(err)
        }
        Err(err) => Err(err.into()),
    }
}

/// Sweep output: the report plus the fingerprint of its input data.
#[derive(Serialize)]
struct SweepFile<'a> {
    input_fingerprint: String,
    #[serde(flatten)]
    report: &'a DiagnosticsReport,
}

fn default_counts(m: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = [2, 3, 5].into_iter().chain((1..).map(|k| 10 * k).take_while(|&c| c < m)).collect();
    counts.retain(|&c| c < m);
    counts.push(m);
    counts
}

pub fn sweep(scenario: &Scenario, kind: SweepKind, console: &Console) -> Result<(PathBuf, PathBuf), CliError> {
    let settings = &scenario.file.sweeps;
    let (report, input) = match kind {
        SweepKind::Rcond => {
            let truth = scenario.truth_pu()?.ok_or_else(|| CliError::config("rcond sweep needs a schedule"))?;
            let base = scenario.schedule_si()?.remove(0).to_per_unit(scenario.base());
            let mut rs = RcondScenario::new(scenario.topology.clone(), truth, scenario.datasheet_pu(), base);
            rs.slack_vmag = scenario.synthesis_options().slack_vmag;
            let grid = settings.r_grid.clone().unwrap_or_else(default_r_grid);
            (rcond_sweep(&rs, &grid), Vec::new())
        }
        SweepKind::Rho => {
            let truth = scenario
                .truth_pu()?
                .ok_or_else(|| CliError::config("rho sweep needs known true parameters, i.e. a schedule"))?;
            let snapshots = scenario.snapshots()?;
            let spec = RhoSweepSpec {
                rho: settings.rho_grid.clone().unwrap_or_else(default_rho_grid),
                solvers: settings.solvers(),
                recovery_tolerance: settings.recovery_tolerance.unwrap_or(RhoSweepSpec::default().recovery_tolerance),
            };
            (rho_sweep(&scenario.topology, &truth, &snapshots, &spec), snapshots)
        }
        SweepKind::Samples => {
            let snapshots = scenario.snapshots()?;
            let spec = SampleStudySpec {
                counts: settings.sample_counts.clone().unwrap_or_else(|| default_counts(snapshots.len())),
                shuffle_seed: scenario.file.seed,
                solvers: settings.solvers(),
            };
            let report = sample_count_study(&scenario.topology, &scenario.datasheet_pu(), &snapshots, &spec)?;
            (report, snapshots)
        }
    };
    let stem = kind.csv_name().trim_end_matches(".csv");
    let json_path = out_path(scenario, &format!("{stem}.json"))?;
    write_json(
        &json_path,
        &SweepFile {
            input_fingerprint: fingerprint(&input),
            report: &report,
        },
    )?;
    let csv_path = out_path(scenario, kind.csv_name())?;
    let file =
        fs::File::create(&csv_path).map_err(|e| CliError::config(format!("cannot write {}: {e}", csv_path.display())))?;
    report.write_csv(file).map_err(CliError::config)?;
    console.say(format!("{} points -> {}, {}", report.records.len(), json_path.display(), csv_path.display()));
    if kind == SweepKind::Rcond {
        if let Some(median) = report.median_rcond() {
            console.say(format!("  median RCOND {median:.3e}"));
        }
    }
    Ok((json_path, csv_path))
}

#[derive(Debug, Serialize)]
struct JacobianCheck {
    passed: bool,
    tolerance: f64,
    regime: AngleRegime,
    #[serde(flatten)]
    fd: FdReport,
    rcond: f64,
    /// The Jacobian is numerically singular at the evaluation point.
    degenerate: bool,
    corrupted_entry: Option<(usize, usize)>,
    input_fingerprint: String,
}

/// Compares the analytical Jacobian at the datasheet parameters with
/// central differences. `corrupt` perturbs one analytical entry.
pub fn check_jacobian(
    scenario: &Scenario,
    corrupt: Option<(usize, usize)>,
    console: &Console,
) -> Result<PathBuf, CliError> {
    let topo = &scenario.topology;
    let params = scenario.datasheet_pu();
    let snapshots = scenario.snapshots()?;
    let regime = scenario.file.solver.regime;
    let estimates = match regime {
        AngleRegime::Pmu => {
            if !has_angles(&snapshots) {
                return Err(CliError::config("PMU regime selected but the measurements carry no angles"));
            }
            None
        }
        AngleRegime::Rms => Some(
            snapshots
                .iter()
                .map(|s| load_flow_angles(topo, &params, s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::load_flow)?,
        ),
    };
    let mut analytic =
        assemble_jacobian(topo, &params, &snapshots, regime, estimates.as_deref()).map_err(CliError::config)?;
    let thetas = resolve_thetas(topo, &snapshots, estimates.as_deref()).map_err(CliError::config)?;
    let numeric = numeric_jacobian(topo, &params, &snapshots, regime, &thetas, FD_STEP).map_err(CliError::config)?;
    let rc = rcond(&analytic.matrix);
    if let Some((row, col)) = corrupt {
        if row >= analytic.matrix.nrows() || col >= analytic.matrix.ncols() {
            return Err(CliError::config(format!(
                "corrupt entry ({row}, {col}) outside the {}x{} Jacobian",
                analytic.matrix.nrows(),
                analytic.matrix.ncols()
            )));
        }
        analytic.matrix[(row, col)] += 1.0 + 0.1 * analytic.matrix[(row, col)].abs();
    }
    let fd = compare_jacobians(&analytic, &numeric, FD_STEP);
    let check = JacobianCheck {
        passed: fd.passes(FD_TOLERANCE),
        tolerance: FD_TOLERANCE,
        regime,
        rcond: rc,
        degenerate: !(rc >= COLLAPSE_RCOND),
        corrupted_entry: corrupt,
        input_fingerprint: fingerprint(&snapshots),
        fd,
    };
    let path = out_path(scenario, "jacobian_check.json")?;
    write_json(&path, &check)?;
    console.say(format!(
        "max relative error {:.3e} at ({}, {}) [{}] over {} entries",
        check.fd.max_rel_error, check.fd.worst_row, check.fd.worst_col, check.fd.worst_label, check.fd.compared
    ));
    if check.degenerate {
        console.say(format!("  Jacobian is degenerate at this operating point (RCOND {rc:.3e})"));
    }
    if !check.passed {
        return Err(CliError::check_failed(
            format!(
                "analytical Jacobian disagrees with finite differences at ({}, {}) [{}]",
                check.fd.worst_row, check.fd.worst_col, check.fd.worst_label
            ),
            serde_json::to_value(&check).map_err(CliError::config)?,
        ));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::default_counts;

    #[test]
    fn counts_end_at_the_sample_total() {
        assert_eq!(default_counts(81), vec![2, 3, 5, 10, 20, 30, 40, 50, 60, 70, 80, 81]);
        assert_eq!(default_counts(9), vec![2, 3, 5, 9]);
        assert_eq!(default_counts(2), vec![2]);
    }
}
