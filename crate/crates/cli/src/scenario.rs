//! Scenario files: one JSON document describing the grid, the data source
//! and the solver settings. Paths inside it are relative to the file.

use std::path::{Path, PathBuf};

use gridline::diagnostics::LsConfigs;
use gridline::grid_model::PerUnitBase;
use gridline::io::{read_snapshots, TopologyFile};
use gridline::power_flow::{SynthesisOptions, SlackRows};
use gridline::scenario::{perturb, power_grid, power_ratio_pair, two_instance, SiInjection};
use gridline::{synthesize_snapshots, GridTopology, LineParams, Method, NoiseModel, Snapshot, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Topology file with datasheet impedances.
    pub topology: PathBuf,
    #[serde(default = "default_base")]
    pub base: PerUnitBase,
    /// Impedances used to synthesize measurements. Defaults to the datasheet.
    #[serde(default)]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    /// Snapshot CSV with recorded measurements.
    #[serde(default)]
    pub measurements: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Attach voltage angles to synthesized snapshots.
    #[serde(default)]
    pub emit_angles: bool,
    /// Slack voltage for synthesis; defaults to the base voltage.
    #[serde(default)]
    pub slack_voltage_v: Option<f64>,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweeps: SweepSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Seeds measurement noise and sample shuffling.
    #[serde(default)]
    pub seed: u64,
}

fn default_base() -> PerUnitBase {
    PerUnitBase {
        s_base_va: 10e3,
        v_base_v: 400.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Explicit { r_ohm: Vec<f64>, x_ohm: Vec<f64> },
    /// Datasheet values scaled by independent `1 + U(−p, p)` factors.
    Perturbed { perturbation: f64, seed: u64 },
}

/// Injection schedules in W and var. Node numbers are 1-based; an empty
/// list means every non-slack node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `+p + jq` then `−p − jq`.
    TwoInstance {
        p_w: f64,
        q_var: f64,
        #[serde(default)]
        nodes: Vec<usize>,
    },
    /// `p + jq` then `ratio · (p + jq)`.
    PowerRatio {
        p_w: f64,
        q_var: f64,
        ratio: f64,
        #[serde(default)]
        nodes: Vec<usize>,
    },
    /// Every `(P, Q)` pair on a square grid.
    Grid {
        min_w: f64,
        max_w: f64,
        step_w: f64,
        #[serde(default)]
        nodes: Vec<usize>,
    },
    Explicit { entries: Vec<SiInjection> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub vmag_rel_sigma: f64,
    /// Standard deviation of P and Q noise in W / var.
    #[serde(default)]
    pub pq_sigma_w: f64,
    #[serde(default)]
    pub theta_sigma_rad: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    #[serde(default)]
    pub r_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub rho_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub sample_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub nr_ls: Option<SolverConfig>,
    #[serde(default)]
    pub bounded_ls: Option<SolverConfig>,
    #[serde(default)]
    pub recovery_tolerance: Option<f64>,
}

impl SweepSettings {
    pub fn solvers(&self) -> LsConfigs {
        let defaults = LsConfigs::default();
        LsConfigs {
            nr_ls: self.nr_ls.unwrap_or(defaults.nr_ls),
            bounded_ls: self.bounded_ls.unwrap_or(defaults.bounded_ls),
        }
    }
}

/// A scenario with its files loaded and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub dir: PathBuf,
    pub topology: GridTopology,
    pub datasheet_ohm: LineParams,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read scenario {}: {e}", path.display())))?;
        let file: ScenarioFile = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid scenario {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, dir)
    }

    pub fn from_file(file: ScenarioFile, dir: PathBuf) -> Result<Self, CliError> {
        file.base.validate().map_err(CliError::config)?;
        match (&file.schedule, &file.measurements) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("scenario sets both a schedule and a measurement file"));
            }
            (None, None) => return Err(CliError::config("scenario needs a schedule or a measurement file")),
            _ => {}
        }
        let topo_path = dir.join(&file.topology);
        let (topology, datasheet_ohm) = TopologyFile::read(&topo_path)
            .and_then(|t| t.to_model())
            .map_err(|e| CliError::config(format!("topology {}: {e}", topo_path.display())))?;
        let scenario = Self {
            file,
            dir,
            topology,
            datasheet_ohm,
        };
        scenario.truth_ohm()?;
        scenario.file.solver.validate().map_err(CliError::config)?;
        Ok(scenario)
    }

    pub fn base(&self) -> &PerUnitBase {
        &self.file.base
    }

    pub fn datasheet_pu(&self) -> LineParams {
        self.datasheet_ohm.to_per_unit(self.base())
    }

    pub fn truth_ohm(&self) -> Result<LineParams, CliError> {
        match &self.file.truth {
            None => Ok(self.datasheet_ohm.clone()),
            Some(TruthSpec::Perturbed { perturbation, seed }) => {
                if !(0.0..1.0).contains(perturbation) {
                    return Err(CliError::config("truth perturbation must lie in [0, 1)"));
                }
                Ok(perturb(&self.datasheet_ohm, *perturbation, *seed))
            }
            Some(TruthSpec::Explicit { r_ohm, x_ohm }) => {
                let params = LineParams::new(r_ohm.clone(), x_ohm.clone()).map_err(CliError::config)?;
                if params.len() != self.topology.line_count() || !params.is_physical() {
                    return Err(CliError::config(format!(
                        "truth needs {} positive resistances and reactances",
                        self.topology.line_count()
                    )));
                }
                Ok(params)
            }
        }
    }

    /// Truth in per-unit, available only for synthetic data.
    pub fn truth_pu(&self) -> Result<Option<LineParams>, CliError> {
        if self.file.schedule.is_none() {
            return Ok(None);
        }
        Ok(Some(self.truth_ohm()?.to_per_unit(self.base())))
    }

    fn nodes(&self, listed: &[usize]) -> Result<Vec<usize>, CliError> {
        if listed.is_empty() {
            return Ok(self.topology.non_slack_nodes().to_vec());
        }
        listed
            .iter()
            .map(|&k| {
                if k == 0 || k > self.topology.node_count() {
                    Err(CliError::config(format!("schedule node {k} does not exist")))
                } else {
                    Ok(k - 1)
                }
            })
            .collect()
    }

    pub fn schedule_si(&self) -> Result<Vec<SiInjection>, CliError> {
        let n = self.topology.node_count();
        let spec = self
            .file
            .schedule
            .as_ref()
            .ok_or_else(|| CliError::config("scenario has no injection schedule"))?;
        let schedule = match spec {
            ScheduleSpec::TwoInstance { p_w, q_var, nodes } => two_instance(n, &self.nodes(nodes)?, *p_w, *q_var),
            ScheduleSpec::PowerRatio {
                p_w,
                q_var,
                ratio,
                nodes,
            } => power_ratio_pair(n, &self.nodes(nodes)?, *p_w, *q_var, *ratio),
            ScheduleSpec::Grid {
                min_w,
                max_w,
                step_w,
                nodes,
            } => {
                if !(*step_w > 0.0 && max_w >= min_w) {
                    return Err(CliError::config("grid schedule needs step_w > 0 and max_w >= min_w"));
                }
                power_grid(n, &self.nodes(nodes)?, *min_w, *max_w, *step_w)
            }
            ScheduleSpec::Explicit { entries } => {
                if let Some(bad) = entries.iter().find(|e| e.p_w.len() != n || e.q_var.len() != n) {
                    return Err(CliError::config(format!(
                        "schedule entry {} must list {n} nodes",
                        bad.label
                    )));
                }
                entries.clone()
            }
        };
        if schedule.is_empty() {
            return Err(CliError::config("schedule is empty"));
        }
        Ok(schedule)
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            vmag_rel_sigma: self.file.noise.vmag_rel_sigma,
            pq_abs_sigma: self.file.noise.pq_sigma_w / self.base().s_base_va,
            theta_abs_sigma: self.file.noise.theta_sigma_rad,
            seed: self.file.seed,
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            slack_vmag: self.file.slack_voltage_v.unwrap_or(self.base().v_base_v) / self.base().v_base_v,
            emit_angles: self.file.emit_angles,
            ..SynthesisOptions::default()
        }
    }

    /// Synthesizes measurements from the schedule.
    pub fn simulate(&self) -> Result<Vec<Snapshot>, CliError> {
        let truth = self.truth_ohm()?.to_per_unit(self.base());
        let schedule: Vec<_> = self.schedule_si()?.iter().map(|s| s.to_per_unit(self.base())).collect();
        synthesize_snapshots(&self.topology, &truth, &schedule, &self.noise(), &self.synthesis_options())
            .map_err(CliError::load_flow)
    }

    /// Measurements from the CSV file, or synthesized from the schedule.
    pub fn snapshots(&self) -> Result<Vec<Snapshot>, CliError> {
        match &self.file.measurements {
            Some(path) => {
                let path = self.dir.join(path);
                let file = std::fs::File::open(&path)
                    .map_err(|e| CliError::config(format!("cannot open {}: {e}", path.display())))?;
                read_snapshots(file, self.topology.node_count(), self.base())
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
            }
            None => self.simulate(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.file.output {
            Some(out) => self.dir.join(out),
            None => PathBuf::from("out"),
        }
    }
}

/// Overrides from the command line; unset fields keep the scenario value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
    pub step_size: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub regime: Option<gridline::AngleRegime>,
    pub slack_rows: Option<SlackRows>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) -> Result<(), CliError> {
        let file = &mut scenario.file;
        if let Some(seed) = self.seed {
            file.seed = seed;
        }
        if let Some(out) = &self.out {
            file.output = Some(std::env::current_dir().unwrap_or_default().join(out));
        }
        if let Some(method) = self.method {
            file.method = Some(method);
        }
        if let Some(alpha) = self.step_size {
            file.solver.step_size = alpha;
        }
        if let Some(tol) = self.tolerance {
            file.solver.tolerance = tol;
        }
        if let Some(max) = self.max_iterations {
            file.solver.max_iterations = max;
        }
        if let Some(regime) = self.regime {
            file.solver.regime = regime;
        }
        if let Some(rows) = self.slack_rows {
            file.solver.slack_rows = Some(rows);
        }
        file.solver.validate().map_err(CliError::config)
    }
}
