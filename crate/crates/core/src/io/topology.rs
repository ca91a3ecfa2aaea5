use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create, open, IoError};
use crate::grid_model::{GridTopology, LineParams};

/// One line of a topology file. Nodes are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

/// Topology file:
///
/// ```json
/// { "nodes": 4, "slack": 1,
///   "lines": [{ "id": 1, "from": 1, "to": 2, "r_ohm": 0.15, "x_ohm": 0.1414 }] }
/// ```
///
/// `from` becomes the `+1` end of the line in the incidence matrix. Lines
/// are ordered by `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub nodes: usize,
    pub slack: usize,
    pub lines: Vec<LineRecord>,
}

impl TopologyFile {
    pub fn from_model(topo: &GridTopology, params_ohm: &LineParams) -> Self {
        let lines = topo
            .lines()
            .iter()
            .map(|line| LineRecord {
                id: line.id + 1,
                from: line.top + 1,
                to: line.bottom + 1,
                r_ohm: params_ohm.r[line.id],
                x_ohm: params_ohm.x[line.id],
            })
            .collect();
        Self {
            nodes: topo.node_count(),
            slack: topo.slack() + 1,
            lines,
        }
    }

    /// Validated topology and line parameters in ohms.
    pub fn to_model(&self) -> Result<(GridTopology, LineParams), IoError> {
        let mut lines: Vec<&LineRecord> = self.lines.iter().collect();
        lines.sort_by_key(|l| l.id);
        if let Some(w) = lines.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(IoError::Format(format!("duplicate line id {}", w[0].id)));
        }
        let zero_based = |node: usize, what: &str| {
            if node == 0 || node > self.nodes {
                Err(IoError::Format(format!(
                    "{what} node {node} outside 1..={}",
                    self.nodes
                )))
            } else {
                Ok(node - 1)
            }
        };
        let slack = zero_based(self.slack, "slack")?;
        let mut edges = Vec::with_capacity(lines.len());
        for l in &lines {
            edges.push((zero_based(l.from, "line")?, zero_based(l.to, "line")?));
        }
        let topo = GridTopology::new(self.nodes, &edges, slack)?;
        if topo.line_count() + 1 != self.nodes {
            return Err(IoError::Format(format!(
                "a radial grid with {} nodes needs {} lines, found {}",
                self.nodes,
                self.nodes - 1,
                topo.line_count()
            )));
        }
        let params = LineParams {
            r: lines.iter().map(|l| l.r_ohm).collect(),
            x: lines.iter().map(|l| l.x_ohm).collect(),
        };
        crate::grid_model::check_params(&topo, &params)?;
        Ok((topo, params))
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}
