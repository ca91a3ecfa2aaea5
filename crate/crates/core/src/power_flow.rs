//! Forward load flow, power-balance residuals and measurement synthesis.
//!
//! Injections follow the generator convention: positive `P`, `Q` flow
//! into the network.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grid_model::{build_admittance, AdmittanceModel, GridTopology, LineParams};

/// Nodal measurements at one time instant, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub label: String,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub vmag: Vec<f64>,
    /// Present only when phasor measurements are emulated.
    pub theta: Option<Vec<f64>>,
}

impl Snapshot {
    pub fn check(&self, topo: &GridTopology) -> Result<(), ModelError> {
        let n = topo.node_count();
        for (what, len) in [
            ("active injections", self.p.len()),
            ("reactive injections", self.q.len()),
            ("voltage magnitudes", self.vmag.len()),
        ] {
            if len != n {
                return Err(ModelError::DimensionMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(theta) = &self.theta {
            if theta.len() != n {
                return Err(ModelError::DimensionMismatch {
                    what: "voltage angles",
                    expected: n,
                    found: theta.len(),
                });
            }
        }
        if let Some(node) = self.vmag.iter().position(|v| !(*v > 0.0)) {
            return Err(ModelError::NonPositiveVoltage { node });
        }
        Ok(())
    }
}

/// Nodal injections for one load-flow run, per-unit, one entry per node.
/// The slack entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub label: String,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Gaussian measurement noise. Voltage magnitudes get relative noise,
/// powers and angles absolute noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub vmag_rel_sigma: f64,
    #[serde(default)]
    pub pq_abs_sigma: f64,
    #[serde(default)]
    pub theta_abs_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    fn is_zero(&self) -> bool {
        self.vmag_rel_sigma == 0.0 && self.pq_abs_sigma == 0.0 && self.theta_abs_sigma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadFlowConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LoadFlowConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadFlowSolution {
    pub vmag: Vec<f64>,
    pub theta: Vec<f64>,
    /// Injections implied by the solved voltages, including the slack node.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

fn complex_injections(y: &DMatrix<Complex<f64>>, v: &DVector<Complex<f64>>) -> DVector<Complex<f64>> {
    let current = y * v;
    v.zip_map(&current, |vk, ik| vk * ik.conj())
}

/// Newton-Raphson load flow with every non-slack node treated as PQ,
/// started from a flat profile at the slack magnitude.
pub fn solve_load_flow(
    topo: &GridTopology,
    params: &LineParams,
    p: &[f64],
    q: &[f64],
    slack_voltage: Complex<f64>,
    config: &LoadFlowConfig,
) -> Result<LoadFlowSolution, ModelError> {
    let n = topo.node_count();
    for (what, len) in [("active injections", p.len()), ("reactive injections", q.len())] {
        if len != n {
            return Err(ModelError::DimensionMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    if !(slack_voltage.norm() > 0.0) {
        return Err(ModelError::NonPositiveVoltage { node: topo.slack() });
    }
    let model = build_admittance(topo, params)?;
    let y = &model.y;
    let pv = topo.non_slack_nodes();
    let m = pv.len();

    let mut vmag = vec![slack_voltage.norm(); n];
    let mut theta = vec![slack_voltage.arg(); n];
    let mut iterations = 0;

    loop {
        let v = DVector::from_iterator(
            n,
            (0..n).map(|k| Complex::from_polar(vmag[k], theta[k])),
        );
        let s = complex_injections(y, &v);
        let mut f = DVector::zeros(2 * m);
        for (row, &k) in pv.iter().enumerate() {
            f[row] = s[k].re - p[k];
            f[m + row] = s[k].im - q[k];
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(ModelError::NoConvergence {
                iterations,
                mismatch,
            });
        }
        if mismatch < config.tolerance {
            return Ok(LoadFlowSolution {
                p: s.iter().map(|c| c.re).collect(),
                q: s.iter().map(|c| c.im).collect(),
                vmag,
                theta,
                iterations,
                mismatch,
            });
        }
        if iterations >= config.max_iterations {
            return Err(ModelError::NoConvergence {
                iterations,
                mismatch,
            });
        }

        let current = y * &v;
        let unit = v.map(|c| c / c.norm());
        let j = Complex::new(0.0, 1.0);
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (row, &k) in pv.iter().enumerate() {
            for (col, &i) in pv.iter().enumerate() {
                let yki = y[(k, i)];
                let mut d_angle = -j * v[k] * (yki * v[i]).conj();
                let mut d_mag = v[k] * (yki * unit[i]).conj();
                if k == i {
                    d_angle += j * v[k] * current[k].conj();
                    d_mag += current[k].conj() * unit[k];
                }
                jac[(row, col)] = d_angle.re;
                jac[(m + row, col)] = d_angle.im;
                jac[(row, m + col)] = d_mag.re;
                jac[(m + row, m + col)] = d_mag.im;
            }
        }
        let mut step = -f;
        if !jac.lu().solve_mut(&mut step) {
            return Err(ModelError::SingularJacobian);
        }
        for (pos, &k) in pv.iter().enumerate() {
            theta[k] += step[pos];
            vmag[k] += step[m + pos];
        }
        iterations += 1;
    }
}

/// Which nodes contribute power-balance rows to a residual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackRows {
    /// Rows for non-slack nodes only.
    #[default]
    Drop,
    /// Rows for every node, slack included.
    Keep,
}

/// Nodes whose `ΔP` then `ΔQ` rows make up one snapshot block, in order.
pub fn residual_nodes(topo: &GridTopology, rows: SlackRows) -> Vec<usize> {
    match rows {
        SlackRows::Drop => topo.non_slack_nodes().to_vec(),
        SlackRows::Keep => (0..topo.node_count()).collect(),
    }
}

/// Neighbours of `node` in the admittance graph, `node` itself first.
pub(crate) fn admittance_row(topo: &GridTopology, node: usize) -> Vec<usize> {
    let mut row = vec![node];
    row.extend(topo.lines_at(node).iter().map(|&l| {
        let line = topo.lines()[l];
        if line.top == node {
            line.bottom
        } else {
            line.top
        }
    }));
    row
}

/// Residuals `[ΔP.., ΔQ..]` of one snapshot for a prebuilt admittance model.
pub fn mismatch_with_model(
    topo: &GridTopology,
    model: &AdmittanceModel,
    snapshot: &Snapshot,
    theta: &[f64],
    rows: SlackRows,
) -> DVector<f64> {
    let nodes = residual_nodes(topo, rows);
    let m = nodes.len();
    let v = &snapshot.vmag;
    let mut out = DVector::zeros(2 * m);
    for (row, &k) in nodes.iter().enumerate() {
        let (mut p, mut q) = (-snapshot.p[k], -snapshot.q[k]);
        for j in admittance_row(topo, k) {
            let scale = v[k] * v[j] * model.magnitude[(k, j)];
            let arg = theta[k] - theta[j] - model.angle[(k, j)];
            p += scale * arg.cos();
            q += scale * arg.sin();
        }
        out[row] = p;
        out[m + row] = q;
    }
    out
}

/// Power-balance residuals `[ΔP_k.., ΔQ_k..]` over the non-slack nodes.
///
/// Angles come from `theta` when given, otherwise from the snapshot.
pub fn mismatch(
    topo: &GridTopology,
    params: &LineParams,
    snapshot: &Snapshot,
    theta: Option<&[f64]>,
) -> Result<DVector<f64>, ModelError> {
    snapshot.check(topo)?;
    let theta = theta
        .or(snapshot.theta.as_deref())
        .ok_or(ModelError::MissingAngles { snapshot: 0 })?;
    if theta.len() != topo.node_count() {
        return Err(ModelError::DimensionMismatch {
            what: "voltage angles",
            expected: topo.node_count(),
            found: theta.len(),
        });
    }
    let model = build_admittance(topo, params)?;
    Ok(mismatch_with_model(topo, &model, snapshot, theta, SlackRows::Drop))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub slack_vmag: f64,
    /// Attach voltage angles to the snapshots (phasor-measurement regime).
    pub emit_angles: bool,
    pub load_flow: LoadFlowConfig,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            slack_vmag: 1.0,
            emit_angles: false,
            load_flow: LoadFlowConfig::default(),
        }
    }
}

/// Runs a load flow per schedule entry and layers measurement noise on top.
///
/// Entry `i` draws its noise from stream `i` of a generator seeded with
/// `noise.seed`, so the result does not depend on evaluation order.
pub fn synthesize_snapshots(
    topo: &GridTopology,
    true_params: &LineParams,
    schedule: &[Injection],
    noise: &NoiseModel,
    options: &SynthesisOptions,
) -> Result<Vec<Snapshot>, ModelError> {
    schedule
        .par_iter()
        .enumerate()
        .map(|(index, entry)| {
            let solved = solve_load_flow(
                topo,
                true_params,
                &entry.p,
                &entry.q,
                Complex::new(options.slack_vmag, 0.0),
                &options.load_flow,
            )?;
            let mut snapshot = Snapshot {
                label: entry.label.clone(),
                p: solved.p,
                q: solved.q,
                vmag: solved.vmag,
                theta: options.emit_angles.then_some(solved.theta),
            };
            if !noise.is_zero() {
                apply_noise(&mut snapshot, topo.slack(), noise, index as u64);
            }
            Ok(snapshot)
        })
        .collect()
}

fn apply_noise(snapshot: &mut Snapshot, slack: usize, noise: &NoiseModel, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(stream);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    for v in snapshot.vmag.iter_mut() {
        *v *= 1.0 + noise.vmag_rel_sigma * draw();
    }
    for p in snapshot.p.iter_mut() {
        *p += noise.pq_abs_sigma * draw();
    }
    for q in snapshot.q.iter_mut() {
        *q += noise.pq_abs_sigma * draw();
    }
    if let Some(theta) = snapshot.theta.as_mut() {
        for (k, t) in theta.iter_mut().enumerate() {
            let e = draw();
            if k != slack {
                *t += noise.theta_abs_sigma * e;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::build_topology;

    fn chain(n: usize) -> GridTopology {
        let lines: Vec<_> = (1..n).map(|k| (k - 1, k)).collect();
        build_topology(&lines, 0).unwrap()
    }

    #[test]
    fn no_load_gives_flat_profile() {
        let topo = chain(4);
        let params = LineParams::uniform(3, 0.01, 0.009);
        let zero = vec![0.0; 4];
        let sol = solve_load_flow(
            &topo,
            &params,
            &zero,
            &zero,
            Complex::new(1.02, 0.0),
            &LoadFlowConfig::default(),
        )
        .unwrap();
        assert!(sol.vmag.iter().all(|&v| v == 1.02));
        assert!(sol.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn two_bus_closed_form() {
        let topo = chain(2);
        let (r, x) = (0.05, 0.04);
        let (p, q) = (-0.6, -0.3);
        let sol = solve_load_flow(
            &topo,
            &LineParams::uniform(1, r, x),
            &[0.0, p],
            &[0.0, q],
            Complex::new(1.0, 0.0),
            &LoadFlowConfig::default(),
        )
        .unwrap();
        // consumed power S_L = -(p + jq); |V2|^4 + (2(R P_L + X Q_L) - 1)|V2|^2 + |Z|^2 |S_L|^2 = 0
        let (pl, ql) = (-p, -q);
        let b = 2.0 * (r * pl + x * ql) - 1.0;
        let c = (r * r + x * x) * (pl * pl + ql * ql);
        let v2sq = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let z = Complex::new(r, x);
        let theta2 = -(Complex::new(v2sq, 0.0) + z * Complex::new(pl, -ql)).arg();
        assert!((sol.vmag[1] - v2sq.sqrt()).abs() < 1e-10);
        assert!((sol.theta[1] - theta2).abs() < 1e-10);
    }

    #[test]
    fn zero_angle_identity() {
        let topo = chain(2);
        let params = LineParams::uniform(1, 1.0, 0.0);
        let snap = Snapshot {
            label: "t".into(),
            p: vec![0.0, 0.3],
            q: vec![0.0, -0.2],
            vmag: vec![1.0, 1.0],
            theta: Some(vec![0.0, 0.0]),
        };
        let res = mismatch(&topo, &params, &snap, None).unwrap();
        assert_eq!(res.len(), 2);
        assert!((res[0] + 0.3).abs() < 1e-15);
        assert!((res[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn missing_angles_is_an_error() {
        let topo = chain(2);
        let snap = Snapshot {
            label: "t".into(),
            p: vec![0.0; 2],
            q: vec![0.0; 2],
            vmag: vec![1.0; 2],
            theta: None,
        };
        let err = mismatch(&topo, &LineParams::uniform(1, 1.0, 1.0), &snap, None).unwrap_err();
        assert!(matches!(err, ModelError::MissingAngles { .. }));
    }

    #[test]
    fn noise_is_seeded_per_entry() {
        let topo = chain(3);
        let params = LineParams::uniform(2, 0.01, 0.01);
        let entry = Injection {
            label: "a".into(),
            p: vec![0.0, 0.2, 0.1],
            q: vec![0.0, 0.1, 0.0],
        };
        let noise = NoiseModel {
            vmag_rel_sigma: 1e-3,
            pq_abs_sigma: 1e-3,
            theta_abs_sigma: 1e-3,
            seed: 7,
        };
        let opts = SynthesisOptions {
            emit_angles: true,
            ..Default::default()
        };
        let a = synthesize_snapshots(&topo, &params, &[entry.clone(), entry.clone()], &noise, &opts)
            .unwrap();
        let b = synthesize_snapshots(&topo, &params, &[entry.clone(), entry], &noise, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].vmag, a[1].vmag);
        assert_eq!(a[0].theta.as_ref().unwrap()[0], 0.0);
    }
}
