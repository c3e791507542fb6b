//! Delimited record files for trajectories and checkout scans.
//!
//! Trajectory file (CSV, header `customer_id,t,x,y`): one sample per row,
//! `t` in absolute epoch seconds, rows of one customer contiguous and in time
//! order. The last row of a customer is its checkout time.
//!
//! Scanner file (CSV, header `txn_time,category,quantity`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::purchase::{ScannerItem, TimedPoint, Trajectory};

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    customer_id: String,
    t: f64,
    x: f64,
    y: f64,
}

fn csv_err(what: &str, e: csv::Error) -> Error {
    Error::Format(format!("{what}: {e}"))
}

pub fn write_trajectories_csv(trajs: &[Trajectory]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for traj in trajs {
        for p in &traj.points {
            w.serialize(TrajectoryRow {
                customer_id: traj.customer_id.clone(),
                t: traj.start_time + p.t,
                x: p.x,
                y: p.y,
            })
            .map_err(|e| csv_err("trajectory", e))?;
        }
    }
    w.into_inner().map_err(|e| Error::Format(format!("trajectory: {e}")))
}

pub fn read_trajectories_csv(bytes: &[u8]) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out: Vec<Trajectory> = Vec::new();
    for (line, row) in r.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| csv_err("trajectory", e))?;
        if ![row.t, row.x, row.y].iter().all(|v| v.is_finite()) {
            return Err(Error::Format(format!("trajectory row {}: non-finite value", line + 2)));
        }
        match out.last_mut() {
            Some(traj) if traj.customer_id == row.customer_id => {
                let t = row.t - traj.start_time;
                if t <= traj.points.last().map_or(f64::NEG_INFINITY, |p| p.t) {
                    return Err(Error::Format(format!(
                        "trajectory row {}: time does not increase for customer {}",
                        line + 2,
                        row.customer_id
                    )));
                }
                traj.points.push(TimedPoint { t, x: row.x, y: row.y });
            }
            _ => out.push(Trajectory {
                customer_id: row.customer_id,
                start_time: row.t,
                points: vec![TimedPoint { t: 0.0, x: row.x, y: row.y }],
            }),
        }
    }
    Ok(out)
}

pub fn write_scanner_csv(items: &[ScannerItem]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for item in items {
        w.serialize(item).map_err(|e| csv_err("scanner", e))?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("scanner: {e}")))
}

pub fn read_scanner_csv(bytes: &[u8]) -> Result<Vec<ScannerItem>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for (line, row) in r.deserialize::<ScannerItem>().enumerate() {
        let item = row.map_err(|e| csv_err("scanner", e))?;
        if item.quantity == 0 {
            return Err(Error::Format(format!("scanner row {}: quantity must be at least 1", line + 2)));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_trajectories_csv(&bytes)
}

pub fn load_scanner(path: &Path) -> Result<Vec<ScannerItem>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_scanner_csv(&bytes)
}
