//! Text file formats.
//!
//! | file | layout |
//! |------|--------|
//! | pressure log | CSV `timestamp,sensor_id,p_raw,t` |
//! | calibration model | JSON, see [`CalibrationModel::to_json`] |
//! | altitude | CSV `timestamp,delta_z,variance` |
//! | point cloud | whitespace separated `x y z [nx ny nz]`, `#` comments |
//! | trajectory | CSV `timestamp,x,y,z,qx,qy,qz,qw[,final_error,iterations,converged]` |
//! | report | CSV `mode,median_pct,std_pct,n_segments` |
//! | degeneracy | CSV `mode,n_scans,n_failed,degenerate_z_scans` |
//! | box plot | whitespace separated `index mode min q1 median q3 max` |
//!
//! Floats are written in shortest round-trip form, so rewriting parsed
//! values is lossless and identical inputs give identical bytes.
//!
//! [`CalibrationModel::to_json`]: crate::barometry::CalibrationModel::to_json

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::altimetry::AltitudeReading;
use crate::barometry::PressureSample;
use crate::error::{Error, Result};
use crate::evaluation::{BoxStats, Comparison, RpeReport, Trajectory};
use crate::pointcloud::{estimate_normals, Frame, PointCloud, RigidTransform, DEFAULT_NORMAL_NEIGHBORS};
use crate::Vec3;

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

fn write_rows<T: Serialize>(writer: impl Write, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PressureRow {
    timestamp: f64,
    sensor_id: String,
    p_raw: f64,
    t: f64,
}

pub fn read_pressure_log(reader: impl Read) -> Result<Vec<PressureSample>> {
    let rows: Vec<PressureRow> = read_rows(reader)?;
    Ok(rows
        .into_iter()
        .map(|r| PressureSample { timestamp: r.timestamp, p_raw: r.p_raw, t: r.t, sensor_id: r.sensor_id })
        .collect())
}

pub fn write_pressure_log(writer: impl Write, samples: &[PressureSample]) -> Result<()> {
    write_rows(
        writer,
        samples.iter().map(|s| PressureRow { timestamp: s.timestamp, sensor_id: s.sensor_id.clone(), p_raw: s.p_raw, t: s.t }),
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AltitudeRow {
    timestamp: f64,
    delta_z: f64,
    variance: f64,
}

pub fn read_altitude(reader: impl Read) -> Result<Vec<AltitudeReading>> {
    let rows: Vec<AltitudeRow> = read_rows(reader)?;
    Ok(rows.into_iter().map(|r| AltitudeReading { timestamp: r.timestamp, delta_z: r.delta_z, variance: r.variance }).collect())
}

pub fn write_altitude(writer: impl Write, readings: &[AltitudeReading]) -> Result<()> {
    write_rows(
        writer,
        readings.iter().map(|r| AltitudeRow { timestamp: r.timestamp, delta_z: r.delta_z, variance: r.variance }),
    )
}

/// Reads an ASCII cloud. Lines hold `x y z` or `x y z nx ny nz`; mixing the
/// two is an error. Without normals they are estimated from the
/// [`DEFAULT_NORMAL_NEIGHBORS`] nearest neighbours and points whose
/// neighbourhood is degenerate are dropped.
pub fn read_cloud(reader: impl BufRead, frame: Frame) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse { line: k + 1, message: format!("{v:?}: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(Error::Parse { line: k + 1, message: format!("expected 3 or 6 values, got {}", values.len()) });
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse { line: k + 1, message: "some lines have normals and some do not".into() });
        }
        points.push(Vec3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vec3::new(values[3], values[4], values[5]));
        }
    }
    match width {
        None => Ok(PointCloud::empty(frame)),
        Some(6) => PointCloud::new(points, normals, frame),
        Some(_) => Ok(estimate_normals(&points, frame, DEFAULT_NORMAL_NEIGHBORS)?.cloud),
    }
}

pub fn write_cloud(mut writer: impl Write, cloud: &PointCloud) -> Result<()> {
    writeln!(writer, "# x y z nx ny nz")?;
    for (p, n) in cloud.points().iter().zip(cloud.normals()) {
        writeln!(writer, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
    }
    Ok(())
}

/// One trajectory line. Registration outputs carry the optional columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub timestamp: f64,
    pub pose: RigidTransform,
    pub final_error: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl TrajectoryRow {
    pub fn pose_only(timestamp: f64, pose: RigidTransform) -> Self {
        Self { timestamp, pose, final_error: None, iterations: None, converged: None }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryCsv {
    timestamp: f64,
    x: f64,
    y: f64,
    z: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
    #[serde(default)]
    final_error: Option<f64>,
    #[serde(default)]
    iterations: Option<usize>,
    #[serde(default)]
    converged: Option<bool>,
}

pub fn read_trajectory(reader: impl Read) -> Result<Vec<TrajectoryRow>> {
    let rows: Vec<TrajectoryCsv> = read_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| {
            let pose = RigidTransform::from_quaternion([r.qx, r.qy, r.qz, r.qw], Vec3::new(r.x, r.y, r.z))
                .map_err(|e| Error::Parse { line: k + 2, message: e.to_string() })?;
            Ok(TrajectoryRow {
                timestamp: r.timestamp,
                pose,
                final_error: r.final_error,
                iterations: r.iterations,
                converged: r.converged,
            })
        })
        .collect()
}

/// Writes the eight pose columns, plus the registration columns when every
/// row has them.
pub fn write_trajectory(mut writer: impl Write, rows: &[TrajectoryRow]) -> Result<()> {
    let full = !rows.is_empty() && rows.iter().all(|r| r.final_error.is_some() && r.iterations.is_some() && r.converged.is_some());
    write!(writer, "timestamp,x,y,z,qx,qy,qz,qw")?;
    writeln!(writer, "{}", if full { ",final_error,iterations,converged" } else { "" })?;
    for r in rows {
        let t = r.pose.translation;
        let [qx, qy, qz, qw] = r.pose.quaternion();
        write!(writer, "{},{},{},{},{},{},{},{}", r.timestamp, t.x, t.y, t.z, qx, qy, qz, qw)?;
        match (full, r.final_error, r.iterations, r.converged) {
            (true, Some(e), Some(i), Some(c)) => writeln!(writer, ",{e},{i},{c}")?,
            _ => writeln!(writer)?,
        }
    }
    Ok(())
}

pub fn trajectory_from_rows(rows: &[TrajectoryRow]) -> Result<Trajectory> {
    Trajectory::new(rows.iter().map(|r| (r.timestamp, r.pose)).collect())
}

pub fn rows_from_trajectory(trajectory: &Trajectory) -> Vec<TrajectoryRow> {
    trajectory.samples().iter().map(|(t, p)| TrajectoryRow::pose_only(*t, *p)).collect()
}

/// Mode-comparison table.
pub fn write_report(mut writer: impl Write, rows: &[(String, RpeReport)]) -> Result<()> {
    writeln!(writer, "mode,median_pct,std_pct,n_segments")?;
    for (mode, r) in rows {
        writeln!(writer, "{mode},{},{},{}", r.median, r.std, r.per_segment.len())?;
    }
    Ok(())
}

/// Per-segment errors, one line per segment.
pub fn write_segments(mut writer: impl Write, rows: &[(String, RpeReport)]) -> Result<()> {
    writeln!(writer, "mode,segment,error_pct")?;
    for (mode, r) in rows {
        for (k, e) in r.per_segment.iter().enumerate() {
            writeln!(writer, "{mode},{k},{e}")?;
        }
    }
    Ok(())
}

/// Box-plot quantiles in a layout gnuplot's `candlesticks` style reads
/// directly: `using 1:4:3:7:6:xticlabels(2)`.
pub fn write_boxplot(mut writer: impl Write, rows: &[(String, RpeReport)]) -> Result<()> {
    writeln!(writer, "# index mode min q1 median q3 max")?;
    for (k, (mode, r)) in rows.iter().enumerate() {
        let b = BoxStats::of(&r.per_segment);
        writeln!(writer, "{k} {mode} {} {} {} {} {}", b.min, b.q1, b.median, b.q3, b.max)?;
    }
    Ok(())
}

/// Registration failures and z-degeneracy per series, summed over comparisons.
pub fn write_degeneracy(mut writer: impl Write, comparisons: &[Comparison]) -> Result<()> {
    writeln!(writer, "mode,n_scans,n_failed,degenerate_z_scans")?;
    let Some(first) = comparisons.first() else {
        return Ok(());
    };
    for (k, r) in first.results.iter().enumerate() {
        let n_scans: usize = comparisons.iter().map(|c| c.n_scans).sum();
        let failed: usize = comparisons.iter().map(|c| c.results[k].failed.len()).sum();
        let degenerate: usize = comparisons.iter().map(|c| c.results[k].degenerate_z).sum();
        writeln!(writer, "{},{n_scans},{failed},{degenerate}", r.series)?;
    }
    Ok(())
}
