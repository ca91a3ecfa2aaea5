//! Radial grid topology, line parameters and the nodal admittance matrix.
//!
//! Node indices are 0-based in memory. All electrical quantities handled
//! here are per-unit; [`PerUnitBase`] converts at the I/O boundary.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One series element between two nodes. `top` carries `+1` in the
/// incidence matrix, `bottom` carries `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub top: usize,
    pub bottom: usize,
}

/// A validated radial (spanning-tree) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    node_count: usize,
    slack: usize,
    lines: Vec<Line>,
    incidence: DMatrix<i8>,
    non_slack: Vec<usize>,
    // position of each node in `non_slack`, `None` for the slack node
    reduced_index: Vec<Option<usize>>,
    node_lines: Vec<Vec<usize>>,
}

/// Builds a topology whose node count is inferred from the largest node index.
pub fn build_topology(lines: &[(usize, usize)], slack: usize) -> Result<GridTopology, ModelError> {
    let node_count = lines
        .iter()
        .map(|&(a, b)| a.max(b) + 1)
        .max()
        .unwrap_or(1);
    GridTopology::new(node_count, lines, slack)
}

impl GridTopology {
    pub fn new(
        node_count: usize,
        lines: &[(usize, usize)],
        slack: usize,
    ) -> Result<Self, ModelError> {
        if node_count < 2 {
            return Err(ModelError::TooFewNodes(node_count));
        }
        if slack >= node_count {
            return Err(ModelError::BadSlack {
                slack,
                nodes: node_count,
            });
        }
        for &(a, b) in lines {
            let bad = a.max(b);
            if bad >= node_count {
                return Err(ModelError::DimensionMismatch {
                    what: "line endpoint",
                    expected: node_count,
                    found: bad + 1,
                });
            }
        }

        let mut forest = DisjointSets::new(node_count);
        for (line, &(from, to)) in lines.iter().enumerate() {
            if !forest.union(from, to) {
                return Err(ModelError::CyclicGraph { line, from, to });
            }
        }

        let mut node_lines = vec![Vec::new(); node_count];
        for (l, &(a, b)) in lines.iter().enumerate() {
            node_lines[a].push(l);
            node_lines[b].push(l);
        }
        // acyclic, so connectivity is all that is left to check
        let root = forest.find(slack);
        if let Some(node) = (0..node_count).find(|&k| forest.find(k) != root) {
            return Err(ModelError::Disconnected { node });
        }
        debug_assert_eq!(lines.len(), node_count - 1);

        let mut incidence = DMatrix::<i8>::zeros(lines.len(), node_count);
        for (l, &(a, b)) in lines.iter().enumerate() {
            incidence[(l, a)] = 1;
            incidence[(l, b)] = -1;
        }

        let non_slack: Vec<usize> = (0..node_count).filter(|&k| k != slack).collect();
        let mut reduced_index = vec![None; node_count];
        for (pos, &k) in non_slack.iter().enumerate() {
            reduced_index[k] = Some(pos);
        }

        Ok(Self {
            node_count,
            slack,
            lines: lines
                .iter()
                .enumerate()
                .map(|(id, &(top, bottom))| Line { id, top, bottom })
                .collect(),
            incidence,
            non_slack,
            reduced_index,
            node_lines,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Branch-to-node matrix, `L x N`, entries in `{-1, 0, +1}`.
    pub fn incidence(&self) -> &DMatrix<i8> {
        &self.incidence
    }

    /// Non-slack nodes in ascending order. This is the row and angle
    /// ordering used by every residual vector.
    pub fn non_slack_nodes(&self) -> &[usize] {
        &self.non_slack
    }

    pub fn reduced_index(&self, node: usize) -> Option<usize> {
        self.reduced_index[node]
    }

    /// Indices of the lines terminating at `node`.
    pub fn lines_at(&self, node: usize) -> &[usize] {
        &self.node_lines[node]
    }

    /// Node-pair list in line order, as accepted by [`GridTopology::new`].
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.lines.iter().map(|l| (l.top, l.bottom)).collect()
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut k: usize) -> usize {
        while self.parent[k] != k {
            self.parent[k] = self.parent[self.parent[k]];
            k = self.parent[k];
        }
        k
    }

    /// Returns `false` when `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Series resistance and reactance of every line.
///
/// Values may be negative while an unconstrained Newton iteration is in
/// flight; [`LineParams::is_physical`] checks the `R, X > 0` invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub r: Vec<f64>,
    pub x: Vec<f64>,
}

impl LineParams {
    pub fn new(r: Vec<f64>, x: Vec<f64>) -> Result<Self, ModelError> {
        if r.len() != x.len() {
            return Err(ModelError::DimensionMismatch {
                what: "reactance vector",
                expected: r.len(),
                found: x.len(),
            });
        }
        Ok(Self { r, x })
    }

    pub fn uniform(lines: usize, r: f64, x: f64) -> Self {
        Self {
            r: vec![r; lines],
            x: vec![x; lines],
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn impedance(&self, line: usize) -> Complex<f64> {
        Complex::new(self.r[line], self.x[line])
    }

    pub fn is_physical(&self) -> bool {
        self.r.iter().chain(&self.x).all(|v| v.is_finite() && *v > 0.0)
    }

    /// Multiplies every impedance by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r: self.r.iter().map(|v| v * factor).collect(),
            x: self.x.iter().map(|v| v * factor).collect(),
        }
    }

    /// `[R_1..R_L, X_1..X_L]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.r.iter().chain(&self.x).copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        let l = values.len() / 2;
        Self {
            r: values[..l].to_vec(),
            x: values[l..2 * l].to_vec(),
        }
    }

    pub fn to_per_unit(&self, base: &PerUnitBase) -> Self {
        self.scaled(1.0 / base.z_base())
    }

    pub fn to_ohms(&self, base: &PerUnitBase) -> Self {
        self.scaled(base.z_base())
    }

    /// Largest relative deviation of R and of X from `reference`, as fractions.
    pub fn max_relative_errors(&self, reference: &LineParams) -> (f64, f64) {
        let worst = |est: &[f64], truth: &[f64]| {
            est.iter()
                .zip(truth)
                .map(|(e, t)| ((e - t) / t).abs())
                .fold(0.0_f64, |acc, v| if v.is_nan() { f64::NAN } else { acc.max(v) })
        };
        (worst(&self.r, &reference.r), worst(&self.x, &reference.x))
    }
}

/// Base quantities for per-unit conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_va: f64,
    pub v_base_v: f64,
}

impl PerUnitBase {
    pub fn new(s_base_va: f64, v_base_v: f64) -> Result<Self, ModelError> {
        let base = Self {
            s_base_va,
            v_base_v,
        };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.s_base_va.is_finite() && self.s_base_va > 0.0) {
            return Err(ModelError::InvalidBase("base power must be positive"));
        }
        if !(self.v_base_v.is_finite() && self.v_base_v > 0.0) {
            return Err(ModelError::InvalidBase("base voltage must be positive"));
        }
        Ok(())
    }

    pub fn z_base(&self) -> f64 {
        self.v_base_v * self.v_base_v / self.s_base_va
    }
}

/// Nodal admittance matrix with its polar form cached.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceModel {
    pub y: DMatrix<Complex<f64>>,
    pub magnitude: DMatrix<f64>,
    pub angle: DMatrix<f64>,
}

impl AdmittanceModel {
    pub fn size(&self) -> usize {
        self.y.nrows()
    }
}

pub(crate) fn check_params(topo: &GridTopology, params: &LineParams) -> Result<(), ModelError> {
    if params.r.len() != topo.line_count() {
        return Err(ModelError::DimensionMismatch {
            what: "resistance vector",
            expected: topo.line_count(),
            found: params.r.len(),
        });
    }
    if params.x.len() != topo.line_count() {
        return Err(ModelError::DimensionMismatch {
            what: "reactance vector",
            expected: topo.line_count(),
            found: params.x.len(),
        });
    }
    for l in 0..params.len() {
        let (r, x) = (params.r[l], params.x[l]);
        if !(r.is_finite() && x.is_finite()) {
            return Err(ModelError::NonFiniteParams { line: l });
        }
        if r * r + x * x == 0.0 {
            return Err(ModelError::ZeroImpedance { line: l });
        }
    }
    Ok(())
}

/// `Y = A^T diag(1/Z) A`, accumulated line by line.
pub fn build_admittance(
    topo: &GridTopology,
    params: &LineParams,
) -> Result<AdmittanceModel, ModelError> {
    check_params(topo, params)?;
    let n = topo.node_count();
    let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for line in topo.lines() {
        let (r, x) = (params.r[line.id], params.x[line.id]);
        let denom = r * r + x * x;
        let series = Complex::new(r / denom, -x / denom);
        let (a, b) = (line.top, line.bottom);
        y[(a, a)] += series;
        y[(b, b)] += series;
        y[(a, b)] -= series;
        y[(b, a)] -= series;
    }
    let magnitude = y.map(|v| v.norm());
    let angle = y.map(|v| v.im.atan2(v.re));
    Ok(AdmittanceModel {
        y,
        magnitude,
        angle,
    })
}
