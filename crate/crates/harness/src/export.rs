//! CSV and JSON output: trajectories, plot series and reports, plus readers
//! for round trips.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use coplan::dynamics::Trajectory;

use crate::montecarlo::MonteCarloReport;
use crate::planning::SimulationLog;
use crate::HarnessError;

/// Seconds between two arrows of a trajectory arrow sequence.
pub const ARROW_PERIOD: f64 = 0.4;

/// One vehicle at one step. The control is the one applied from this state;
/// the final state of a log has none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run: usize,
    pub vehicle: usize,
    pub k: usize,
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub psi: f64,
    pub a: Option<f64>,
    pub delta: Option<f64>,
}

pub const TRAJECTORY_COLUMNS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrowRow {
    pub run: usize,
    pub vehicle: usize,
    pub k: usize,
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run: usize,
    pub cycle: usize,
    pub vehicle: usize,
    pub vehicle_time: f64,
    pub coordinator_time: f64,
    pub wall_time: f64,
}

fn export_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Export(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(|e| export_err(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| export_err(path, e))?;
    }
    w.flush().map_err(|e| export_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| export_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| export_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| export_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let file = File::open(path).map_err(|e| export_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| export_err(path, e))
}

pub fn log_rows(run: usize, log: &SimulationLog) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (k, states) in log.states.iter().enumerate() {
        for (vehicle, x) in states.iter().enumerate() {
            let u = log.controls.get(k).map(|c| c[vehicle]);
            rows.push(TrajectoryRow {
                run,
                vehicle,
                k,
                px: x.px,
                py: x.py,
                v: x.v,
                psi: x.psi,
                a: u.map(|u| u.a),
                delta: u.map(|u| u.delta),
            });
        }
    }
    rows
}

/// Rows of a planned profile; `k` runs over `1..=T` as in the plan.
pub fn profile_rows(run: usize, profile: &[Trajectory]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (vehicle, t) in profile.iter().enumerate() {
        for k in 1..=t.horizon() {
            let x = t.state(k);
            let u = t.controls.get(k - 1);
            rows.push(TrajectoryRow {
                run,
                vehicle,
                k,
                px: x.px,
                py: x.py,
                v: x.v,
                psi: x.psi,
                a: u.map(|u| u.a),
                delta: u.map(|u| u.delta),
            });
        }
    }
    rows
}

/// Steps between arrows at sampling period `ts`.
pub fn arrow_stride(ts: f64) -> usize {
    ((ARROW_PERIOD / ts).round() as usize).max(1)
}

pub fn arrow_rows(run: usize, log: &SimulationLog, ts: f64) -> Vec<ArrowRow> {
    let stride = arrow_stride(ts);
    log.states
        .iter()
        .enumerate()
        .step_by(stride)
        .flat_map(|(k, states)| {
            states.iter().enumerate().map(move |(vehicle, x)| ArrowRow {
                run,
                vehicle,
                k,
                t: k as f64 * ts,
                px: x.px,
                py: x.py,
                psi: x.psi,
            })
        })
        .collect()
}

/// Box-plot series: one row per vehicle per planning cycle.
pub fn timing_rows(report: &MonteCarloReport) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    for r in &report.records {
        for (cycle, times) in r.vehicle_time.iter().enumerate() {
            for (vehicle, &t) in times.iter().enumerate() {
                rows.push(TimingRow {
                    run: r.run,
                    cycle,
                    vehicle,
                    vehicle_time: t,
                    coordinator_time: r.coordinator_time[cycle],
                    wall_time: r.wall_time[cycle],
                });
            }
        }
    }
    rows
}

/// Writes `trajectories.csv`, `arrows.csv`, and `log.json` for one simulation into `dir`.
pub fn export_simulation(dir: &Path, run: usize, log: &SimulationLog, ts: f64) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| export_err(dir, e))?;
    write_csv(&dir.join("trajectories.csv"), log_rows(run, log))?;
    write_csv(&dir.join("arrows.csv"), arrow_rows(run, log, ts))?;
    write_json(&dir.join("log.json"), log)
}

/// Writes `report.json`, `timing.csv` and, for kept logs, `trajectories.csv` and `arrows.csv`.
pub fn export_study(
    dir: &Path,
    report: &MonteCarloReport,
    logs: &[Option<SimulationLog>],
    ts: f64,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| export_err(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    write_csv(&dir.join("timing.csv"), timing_rows(report))?;
    let kept = || logs.iter().enumerate().filter_map(|(r, l)| l.as_ref().map(|l| (r, l)));
    write_csv(&dir.join("trajectories.csv"), kept().flat_map(|(r, l)| log_rows(r, l)))?;
    write_csv(&dir.join("arrows.csv"), kept().flat_map(|(r, l)| arrow_rows(r, l, ts)))
}
