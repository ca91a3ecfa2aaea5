use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{create, IoError};
use crate::estimators::{EstimateReport, IterationRecord, Method, SolverConfig, Status, Warning};
use crate::grid_model::{GridTopology, PerUnitBase};
use crate::power_flow::Snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEstimate {
    /// 1-based line id.
    pub id: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub r_pu: f64,
    pub x_pu: f64,
}

/// Estimation report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: Method,
    pub status: Status,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub lines: Vec<LineEstimate>,
    /// Estimated angles per snapshot (RMS-only data).
    pub angles_rad: Option<Vec<Vec<f64>>>,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<Warning>,
    pub config: SolverConfig,
    pub base: PerUnitBase,
    /// SHA-256 of the snapshot data the estimate was computed from.
    pub input_fingerprint: String,
    pub wall_time_s: f64,
}

impl ReportFile {
    pub fn new(
        report: &EstimateReport,
        topo: &GridTopology,
        config: &SolverConfig,
        base: &PerUnitBase,
        snapshots: &[Snapshot],
    ) -> Self {
        let ohm = report.params.to_ohms(base);
        let lines = topo
            .lines()
            .iter()
            .map(|line| LineEstimate {
                id: line.id + 1,
                r_ohm: ohm.r[line.id],
                x_ohm: ohm.x[line.id],
                r_pu: report.params.r[line.id],
                x_pu: report.params.x[line.id],
            })
            .collect();
        Self {
            method: report.method,
            status: report.status,
            iterations: report.iterations(),
            final_residual_norm: report.final_residual_norm,
            lines,
            angles_rad: report.angles.clone(),
            trace: report.trace.clone(),
            warnings: report.warnings.clone(),
            config: *config,
            base: *base,
            input_fingerprint: fingerprint(snapshots),
            wall_time_s: report.wall_time_s,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Hex SHA-256 over labels and the exact bit patterns of all measurements.
pub fn fingerprint(snapshots: &[Snapshot]) -> String {
    let mut hasher = Sha256::new();
    for snap in snapshots {
        hasher.update((snap.label.len() as u64).to_le_bytes());
        hasher.update(snap.label.as_bytes());
        for series in [&snap.p, &snap.q, &snap.vmag] {
            hasher.update((series.len() as u64).to_le_bytes());
            for v in series.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        match &snap.theta {
            Some(theta) => {
                hasher.update([1u8]);
                for v in theta {
                    hasher.update(v.to_le_bytes());
                }
            }
            None => hasher.update([0u8]),
        }
    }
    hex::encode(hasher.finalize())
}
