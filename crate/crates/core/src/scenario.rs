//! The bundled four-node test district and injection schedules in SI units.
//!
//! The laboratory district has five measurement points on one feeder. Node 4
//! cannot inject, so the last three series elements are merged and the
//! effective grid is a chain of three lines:
//!
//! ```text
//! slack ──Z1── PM1 ──Z2── PM2 ──Z3+Z4+Z5── PM3
//! ```
//!
//! Datasheet values are 150 + j141.4 mΩ for `Z1..Z4` and 184.8 + j5.3 mΩ for
//! `Z5`. The per-unit base (10 kVA, 400 V, so 16 Ω) is an assumption; no
//! base is published for the laboratory set-up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid_model::{build_topology, GridTopology, LineParams, PerUnitBase};
use crate::power_flow::Injection;

#[derive(Debug, Clone, PartialEq)]
pub struct District {
    pub topology: GridTopology,
    /// Datasheet impedances in ohms.
    pub datasheet_ohm: LineParams,
    pub base: PerUnitBase,
    /// Nodes with controllable injections (PM1..PM3).
    pub load_nodes: Vec<usize>,
}

impl District {
    pub fn datasheet_pu(&self) -> LineParams {
        self.datasheet_ohm.to_per_unit(&self.base)
    }
}

pub const DATASHEET_R_OHM: f64 = 0.150;
pub const DATASHEET_X_OHM: f64 = 0.1414;
pub const CABLE_R_OHM: f64 = 0.1848;
pub const CABLE_X_OHM: f64 = 0.0053;

pub fn district() -> District {
    let topology = build_topology(&[(0, 1), (1, 2), (2, 3)], 0).expect("chain is radial");
    let merged_r = 2.0 * DATASHEET_R_OHM + CABLE_R_OHM;
    let merged_x = 2.0 * DATASHEET_X_OHM + CABLE_X_OHM;
    District {
        topology,
        datasheet_ohm: LineParams {
            r: vec![DATASHEET_R_OHM, DATASHEET_R_OHM, merged_r],
            x: vec![DATASHEET_X_OHM, DATASHEET_X_OHM, merged_x],
        },
        base: PerUnitBase {
            s_base_va: 10e3,
            v_base_v: 400.0,
        },
        load_nodes: vec![1, 2, 3],
    }
}

/// Multiplies every `R_l` and `X_l` by an independent `1 + U(−fraction, fraction)`.
pub fn perturb(params: &LineParams, fraction: f64, seed: u64) -> LineParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || 1.0 + rng.random_range(-fraction..=fraction);
    let r = params.r.iter().map(|v| v * factor()).collect();
    let x = params.x.iter().map(|v| v * factor()).collect();
    LineParams { r, x }
}

/// Injections for one load-flow run, in W and var, one entry per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiInjection {
    pub label: String,
    pub p_w: Vec<f64>,
    pub q_var: Vec<f64>,
}

impl SiInjection {
    /// The same `p_w + j q_var` at every node in `nodes`, zero elsewhere.
    pub fn uniform(label: impl Into<String>, node_count: usize, nodes: &[usize], p_w: f64, q_var: f64) -> Self {
        let mut p = vec![0.0; node_count];
        let mut q = vec![0.0; node_count];
        for &k in nodes {
            p[k] = p_w;
            q[k] = q_var;
        }
        Self {
            label: label.into(),
            p_w: p,
            q_var: q,
        }
    }

    pub fn to_per_unit(&self, base: &PerUnitBase) -> Injection {
        Injection {
            label: self.label.clone(),
            p: self.p_w.iter().map(|v| v / base.s_base_va).collect(),
            q: self.q_var.iter().map(|v| v / base.s_base_va).collect(),
        }
    }
}

pub fn schedule_to_per_unit(schedule: &[SiInjection], base: &PerUnitBase) -> Vec<Injection> {
    schedule.iter().map(|s| s.to_per_unit(base)).collect()
}

/// `+p + jq` at `t1` and `−p − jq` at `t2` on every node in `nodes`.
pub fn two_instance(node_count: usize, nodes: &[usize], p_w: f64, q_var: f64) -> Vec<SiInjection> {
    vec![
        SiInjection::uniform("t1", node_count, nodes, p_w, q_var),
        SiInjection::uniform("t2", node_count, nodes, -p_w, -q_var),
    ]
}

/// `base` at `t1` and `r · base` at `t2`.
pub fn power_ratio_pair(node_count: usize, nodes: &[usize], p_w: f64, q_var: f64, ratio: f64) -> Vec<SiInjection> {
    vec![
        SiInjection::uniform("t1", node_count, nodes, p_w, q_var),
        SiInjection::uniform("t2", node_count, nodes, ratio * p_w, ratio * q_var),
    ]
}

/// Every `(P, Q)` on the grid `min..=max` with spacing `step` (W and var),
/// applied identically to all nodes in `nodes`. P varies slowest.
pub fn power_grid(node_count: usize, nodes: &[usize], min: f64, max: f64, step: f64) -> Vec<SiInjection> {
    let count = ((max - min) / step).round() as i64;
    let levels: Vec<f64> = (0..=count).map(|i| min + i as f64 * step).collect();
    let mut out = Vec::with_capacity(levels.len() * levels.len());
    for &p in &levels {
        for &q in &levels {
            out.push(SiInjection::uniform(
                format!("p{p}_q{q}"),
                node_count,
                nodes,
                p,
                q,
            ));
        }
    }
    out
}
