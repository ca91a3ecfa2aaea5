//! File formats. All files carry SI units and 1-based node numbers; the
//! conversion to per-unit and 0-based indices happens here.

mod report;
mod snapshots;
mod topology;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::ModelError;

pub use report::{fingerprint, LineEstimate, ReportFile};
pub use snapshots::{
    read_snapshot_rows, read_snapshots, rows_from_snapshots, snapshots_from_rows, write_snapshot_rows,
    write_snapshots, SnapshotRow,
};
pub use topology::{LineRecord, TopologyFile};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create(path: &Path) -> Result<std::fs::File, IoError> {
    std::fs::File::create(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
