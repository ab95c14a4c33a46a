use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointTable;

use super::RateTable;

pub const TRIALS_HEADER: [&str; 8] = [
    "scenario",
    "n",
    "d",
    "trial",
    "metric",
    "value",
    "iterations",
    "converged",
];
pub const AGGREGATE_HEADER: [&str; 7] = ["scenario", "n", "d", "trials", "mean", "std", "report"];
pub const SLOPES_HEADER: [&str; 4] = ["scenario", "series", "slope", "intercept"];
pub const TRAJECTORY_HEADER: [&str; 4] = ["scenario", "step", "norm", "weight"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<stem>_trials.csv`, `<stem>_aggregate.csv` and
/// `<stem>_slopes.csv` into `dir`, returning the three paths.
pub fn write_rate_table(table: &RateTable, dir: &Path, stem: &str) -> Result<[PathBuf; 3]> {
    let paths = [
        dir.join(format!("{stem}_trials.csv")),
        dir.join(format!("{stem}_aggregate.csv")),
        dir.join(format!("{stem}_slopes.csv")),
    ];

    let p = &paths[0];
    let mut w = writer(p)?;
    w.write_record(TRIALS_HEADER).map_err(csv_err(p))?;
    for r in &table.trials {
        w.write_record([
            r.scenario.clone(),
            r.n.to_string(),
            r.d.to_string(),
            r.trial.to_string(),
            r.metric.clone(),
            format_float(r.value),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])
        .map_err(csv_err(p))?;
    }
    finish(w, p)?;

    let p = &paths[1];
    let mut w = writer(p)?;
    w.write_record(AGGREGATE_HEADER).map_err(csv_err(p))?;
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.n.to_string(),
            r.d.to_string(),
            r.trials.to_string(),
            format_float(r.mean),
            format_float(r.std),
            format_float(r.report),
        ])
        .map_err(csv_err(p))?;
    }
    finish(w, p)?;

    let p = &paths[2];
    let mut w = writer(p)?;
    w.write_record(SLOPES_HEADER).map_err(csv_err(p))?;
    for s in &table.slopes {
        w.write_record([
            s.scenario.clone(),
            s.series.clone(),
            format_float(s.slope),
            format_float(s.intercept),
        ])
        .map_err(csv_err(p))?;
    }
    finish(w, p)?;
    Ok(paths)
}

/// One logged population-EM step. `weight` is empty for fits without a
/// weight iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub scenario: String,
    pub step: usize,
    pub norm: f64,
    pub weight: Option<f64>,
}

pub fn write_trajectories(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.step.to_string(),
            format_float(r.norm),
            r.weight.map(format_float).unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// Writes the per-`n` summary of a fixed-point experiment; the median is
/// empty when no trial had a nonzero root.
pub fn write_fixed_points(table: &FixedPointTable, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "trials", "nonzero", "frequency", "median_scaled"])
        .map_err(csv_err(path))?;
    for r in &table.rows {
        w.write_record([
            r.n.to_string(),
            r.trials.to_string(),
            r.nonzero.to_string(),
            format_float(r.frequency),
            r.median_scaled.map(format_float).unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(w, path)
}
