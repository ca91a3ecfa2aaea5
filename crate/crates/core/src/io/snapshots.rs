//! Snapshot CSV: `t,node,p_w,q_var,vmag_v,theta_rad`, one row per
//! `(t, node)`. `theta_rad` is empty for RMS-only data. Values are written
//! with 17 significant digits, so a write/read cycle is bit-exact.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::grid_model::PerUnitBase;
use crate::power_flow::Snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub t: String,
    /// 1-based node number.
    pub node: usize,
    pub p_w: f64,
    pub q_var: f64,
    pub vmag_v: f64,
    pub theta_rad: Option<f64>,
}

const HEADER: [&str; 6] = ["t", "node", "p_w", "q_var", "vmag_v", "theta_rad"];

pub fn write_snapshot_rows<W: Write>(out: W, rows: &[SnapshotRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record([
            row.t.clone(),
            row.node.to_string(),
            format!("{:.16e}", row.p_w),
            format!("{:.16e}", row.q_var),
            format!("{:.16e}", row.vmag_v),
            row.theta_rad.map_or(String::new(), |v| format!("{v:.16e}")),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_snapshot_rows<R: Read>(input: R) -> Result<Vec<SnapshotRow>, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(IoError::Format(format!(
            "expected columns {}, found {}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

pub fn rows_from_snapshots(snapshots: &[Snapshot], base: &PerUnitBase) -> Vec<SnapshotRow> {
    let mut rows = Vec::new();
    for snap in snapshots {
        for k in 0..snap.p.len() {
            rows.push(SnapshotRow {
                t: snap.label.clone(),
                node: k + 1,
                p_w: snap.p[k] * base.s_base_va,
                q_var: snap.q[k] * base.s_base_va,
                vmag_v: snap.vmag[k] * base.v_base_v,
                theta_rad: snap.theta.as_ref().map(|t| t[k]),
            });
        }
    }
    rows
}

/// Groups rows by `t` in order of first appearance. Every snapshot must
/// list each node `1..=node_count` once, and either all or none of its rows
/// may carry an angle.
pub fn snapshots_from_rows(
    rows: &[SnapshotRow],
    node_count: usize,
    base: &PerUnitBase,
) -> Result<Vec<Snapshot>, IoError> {
    let mut groups: Vec<(&str, Vec<&SnapshotRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(t, _)| *t == row.t) {
            Some((_, group)) => group.push(row),
            None => groups.push((&row.t, vec![row])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (t, group) in groups {
        let mut slots: Vec<Option<&SnapshotRow>> = vec![None; node_count];
        for row in group {
            if row.node == 0 || row.node > node_count {
                return Err(IoError::Format(format!(
                    "snapshot {t}: node {} outside 1..={node_count}",
                    row.node
                )));
            }
            if slots[row.node - 1].replace(row).is_some() {
                return Err(IoError::Format(format!("snapshot {t}: node {} listed twice", row.node)));
            }
        }
        let rows: Vec<&SnapshotRow> = slots
            .into_iter()
            .enumerate()
            .map(|(k, r)| r.ok_or_else(|| IoError::Format(format!("snapshot {t}: node {} missing", k + 1))))
            .collect::<Result<_, _>>()?;
        let with_angle = rows.iter().filter(|r| r.theta_rad.is_some()).count();
        if with_angle != 0 && with_angle != node_count {
            return Err(IoError::Format(format!(
                "snapshot {t}: angles given for {with_angle} of {node_count} nodes"
            )));
        }
        out.push(Snapshot {
            label: t.to_string(),
            p: rows.iter().map(|r| r.p_w / base.s_base_va).collect(),
            q: rows.iter().map(|r| r.q_var / base.s_base_va).collect(),
            vmag: rows.iter().map(|r| r.vmag_v / base.v_base_v).collect(),
            theta: (with_angle == node_count).then(|| rows.iter().map(|r| r.theta_rad.unwrap_or(0.0)).collect()),
        });
    }
    Ok(out)
}

pub fn write_snapshots<W: Write>(out: W, snapshots: &[Snapshot], base: &PerUnitBase) -> Result<(), IoError> {
    write_snapshot_rows(out, &rows_from_snapshots(snapshots, base))
}

pub fn read_snapshots<R: Read>(input: R, node_count: usize, base: &PerUnitBase) -> Result<Vec<Snapshot>, IoError> {
    snapshots_from_rows(&read_snapshot_rows(input)?, node_count, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> PerUnitBase {
        PerUnitBase {
            s_base_va: 10e3,
            v_base_v: 400.0,
        }
    }

    #[test]
    fn rows_round_trip_bit_exact() {
        let rows = vec![
            SnapshotRow {
                t: "t1".into(),
                node: 1,
                p_w: 0.1 + 0.2,
                q_var: -1.0 / 3.0,
                vmag_v: 400.0 * std::f64::consts::FRAC_1_SQRT_2,
                theta_rad: None,
            },
            SnapshotRow {
                t: "t1".into(),
                node: 2,
                p_w: f64::MIN_POSITIVE,
                q_var: 1e300,
                vmag_v: 399.99999999999994,
                theta_rad: None,
            },
        ];
        let mut buf = Vec::new();
        write_snapshot_rows(&mut buf, &rows).unwrap();
        let back = read_snapshot_rows(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn groups_and_validates() {
        let text = "t,node,p_w,q_var,vmag_v,theta_rad\n\
                    a,2,100,50,398,-0.01\n\
                    a,1,-100,-50,400,0\n\
                    b,1,0,0,400,\n\
                    b,2,0,0,400,\n";
        let snaps = read_snapshots(text.as_bytes(), 2, &base()).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].p, vec![-0.01, 0.01]);
        assert_eq!(snaps[0].theta, Some(vec![0.0, -0.01]));
        assert_eq!(snaps[1].theta, None);

        let missing = "t,node,p_w,q_var,vmag_v,theta_rad\na,1,0,0,400,\n";
        assert!(read_snapshots(missing.as_bytes(), 2, &base()).is_err());
        let mixed = "t,node,p_w,q_var,vmag_v,theta_rad\na,1,0,0,400,0\na,2,0,0,400,\n";
        assert!(read_snapshots(mixed.as_bytes(), 2, &base()).is_err());
        let header = "t,node,p,q,v,theta\n";
        assert!(matches!(read_snapshot_rows(header.as_bytes()), Err(IoError::Format(_))));
    }
}
