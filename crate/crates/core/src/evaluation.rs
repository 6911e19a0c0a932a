//! The z-only relative pose error, summary statistics and the end-to-end
//! comparison of registration modes on simulated scenarios.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::altimetry::{differential_altitude, interpolate, AltitudeReading, AtmosphereConstants, PressureStream};
use crate::barometry::{fit_calibration, CalibrationModel, FilterConfig, Pattern, PressureFilter, PressureSample};
use crate::error::{Error, Result};
use crate::pointcloud::{Frame, PointCloud, RigidTransform};
use crate::registration::{icp, ConstraintMode, IcpConfig};
use crate::simulation::{calibration_campaign, render_scan, scenario, simulate_baro, simulate_prior, GroundTruth, Scenario, SensorRigSim};

/// Maximum timestamp difference for pairing estimate and ground truth, s.
pub const ASSOCIATION_TOLERANCE: f64 = 0.05;
pub const DEFAULT_SEGMENT_DISTANCE: f64 = 5.0;
/// Samples per calibration campaign.
pub const CAMPAIGN_SIZE: usize = 2000;
/// Smallest observation variance handed to the pressure filter, Pa^2.
const MIN_FILTER_VARIANCE: f64 = 1e-6;

/// Timestamped poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, RigidTransform)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, RigidTransform)>) -> Result<Self> {
        if let Some((t, _)) = samples.iter().find(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite timestamp {t}")));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(format!(
                "timestamps must be strictly increasing ({} after {})",
                w[1].0, w[0].0
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, RigidTransform)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The samples whose index is not in `excluded`.
    pub fn without(&self, excluded: &BTreeSet<usize>) -> Trajectory {
        let samples = self.samples.iter().enumerate().filter(|(k, _)| !excluded.contains(k)).map(|(_, s)| *s).collect();
        Trajectory { samples }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeReport {
    /// Percent of the segment length.
    pub per_segment: Vec<f64>,
    pub median: f64,
    /// Sample standard deviation, percent.
    pub std: f64,
    /// m.
    pub segment_distance: f64,
}

impl RpeReport {
    pub fn from_segments(per_segment: Vec<f64>, segment_distance: f64) -> Result<Self> {
        if per_segment.is_empty() {
            return Err(Error::InvalidInput("no segments to summarize".into()));
        }
        Ok(Self { median: median(&per_segment), std: sample_std(&per_segment), per_segment, segment_distance })
    }
}

/// Linear-interpolated quantile of unsorted data, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Standard deviation with the `n - 1` denominator; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Five-number summary for box plots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            min: quantile_sorted(&sorted, 0.0),
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: quantile_sorted(&sorted, 1.0),
        }
    }
}

/// Pairs each estimate sample with the nearest ground-truth timestamp,
/// keeping pairs within [`ASSOCIATION_TOLERANCE`].
pub fn associate(estimate: &Trajectory, ground_truth: &Trajectory) -> Result<Vec<(usize, usize)>> {
    let gt = ground_truth.samples();
    let mut pairs = Vec::new();
    for (i, (t, _)) in estimate.samples().iter().enumerate() {
        let idx = gt.partition_point(|s| s.0 < *t);
        let best = [idx.checked_sub(1), (idx < gt.len()).then_some(idx)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (gt[a].0 - t).abs().total_cmp(&(gt[b].0 - t).abs()));
        if let Some(j) = best {
            if (gt[j].0 - t).abs() <= ASSOCIATION_TOLERANCE {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Association("estimate and ground truth share no timestamps".into()));
    }
    Ok(pairs)
}

/// Adapted relative pose error on z over `segment_distance` of
/// ground-truth path, starting a segment at every associated sample.
pub fn z_rpe(estimate: &Trajectory, ground_truth: &Trajectory, segment_distance: f64) -> Result<RpeReport> {
    z_rpe_masked(estimate, ground_truth, segment_distance, &[])
}

/// [`z_rpe`] skipping segments whose time span overlaps any `(start, end)` mask.
pub fn z_rpe_masked(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    segment_distance: f64,
    masks: &[(f64, f64)],
) -> Result<RpeReport> {
    if !(segment_distance > 0.0 && segment_distance.is_finite()) {
        return Err(Error::InvalidInput(format!("segment distance must be > 0, got {segment_distance}")));
    }
    let pairs = associate(estimate, ground_truth)?;
    let est = estimate.samples();
    let gt = ground_truth.samples();
    let mut along = Vec::with_capacity(pairs.len());
    let mut total = 0.0;
    for (k, &(_, j)) in pairs.iter().enumerate() {
        if k > 0 {
            total += (gt[j].1.translation - gt[pairs[k - 1].1].1.translation).norm();
        }
        along.push(total);
    }
    if total < segment_distance {
        return Err(Error::InvalidInput(format!(
            "ground-truth path of {total} m is shorter than the {segment_distance} m segment"
        )));
    }
    let mut errors = Vec::new();
    let mut end = 0;
    for start in 0..pairs.len() {
        end = end.max(start + 1);
        while end < pairs.len() && along[end] - along[start] < segment_distance {
            end += 1;
        }
        if end == pairs.len() {
            break;
        }
        let (ei, gi) = pairs[start];
        let (ej, gj) = pairs[end];
        let (t0, t1) = (gt[gi].0, gt[gj].0);
        if masks.iter().any(|&(a, b)| t0 < b && t1 > a) {
            continue;
        }
        let d = along[end] - along[start];
        let dz_est = est[ej].1.translation.z - est[ei].1.translation.z;
        let dz_gt = gt[gj].1.translation.z - gt[gi].1.translation.z;
        errors.push((dz_est - dz_gt).abs() / d * 100.0);
    }
    RpeReport::from_segments(errors, segment_distance)
}

/// Calibrated, filtered differential altitude of a simulated run.
#[derive(Clone, Debug)]
pub struct AltitudePipeline {
    pub base_model: CalibrationModel,
    pub rover_model: CalibrationModel,
    pub readings: Vec<AltitudeReading>,
}

fn filtered_stream(samples: &[PressureSample], model: &CalibrationModel) -> Result<PressureStream> {
    let variance = model.sigma_p2().max(MIN_FILTER_VARIANCE);
    let mut filter = PressureFilter::new(FilterConfig::new(variance / 100.0, variance)?)?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        out.push((s.timestamp, filter.update(model.apply_sample(s)?)?));
    }
    Ok(PressureStream { samples: out, variance: filter.variance() })
}

/// Calibrates both barometers on simulated chamber campaigns (simple
/// pattern), then calibrates, filters and differences the run's streams.
pub fn altitude_pipeline(
    gt: &GroundTruth,
    rig: &SensorRigSim,
    t_ambient: f64,
    consts: &AtmosphereConstants,
) -> Result<AltitudePipeline> {
    let base_model = fit_calibration(&calibration_campaign(rig, "base", &[], CAMPAIGN_SIZE, 0), Pattern::Simple)?;
    let rover_model = fit_calibration(&calibration_campaign(rig, "rover", &rig.baro_temp_bias, CAMPAIGN_SIZE, 1), Pattern::Simple)?;
    let (base, rover) = simulate_baro(gt, rig, t_ambient, consts)?;
    let readings = differential_altitude(
        &filtered_stream(&base, &base_model)?,
        &filtered_stream(&rover, &rover_model)?,
        t_ambient,
        consts,
    )?;
    Ok(AltitudePipeline { base_model, rover_model, readings })
}

/// Signed mean altitude error over the settled part of each `dwell`-long
/// window, skipping the first `settle` seconds of every window.
pub fn steady_state_errors(readings: &[AltitudeReading], truth: &[(f64, f64)], dwell: f64, settle: f64) -> Result<Vec<f64>> {
    if !(dwell > 0.0 && (0.0..dwell).contains(&settle)) {
        return Err(Error::InvalidInput("need dwell > 0 and 0 <= settle < dwell".into()));
    }
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in readings {
        let window = (r.timestamp / dwell + 1e-9).floor() as usize;
        if r.timestamp - window as f64 * dwell < settle - 1e-9 {
            continue;
        }
        let z = interpolate(truth, r.timestamp)
            .ok_or(Error::OutOfRange { timestamp: r.timestamp, start: truth[0].0, end: truth[truth.len() - 1].0 })?;
        if sums.len() <= window {
            sums.resize(window + 1, (0.0, 0));
        }
        sums[window].0 += r.delta_z - z;
        sums[window].1 += 1;
    }
    Ok(sums.into_iter().filter(|s| s.1 > 0).map(|(sum, n)| sum / n as f64).collect())
}

/// One trajectory source in a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Series {
    /// The noisy odometry itself.
    PriorOdometry,
    /// Registration in the given mode; three_dof uses the altitude as a constraint.
    Icp(ConstraintMode),
    /// Registration with the altitude only replacing the prior's z.
    IcpAltitudePrior(ConstraintMode),
}

impl Series {
    /// The six series of the drift comparison, in report order.
    pub const DEFAULT: [Series; 6] = [
        Series::Icp(ConstraintMode::SixDof),
        Series::Icp(ConstraintMode::FourDof),
        Series::Icp(ConstraintMode::ThreeDof),
        Series::IcpAltitudePrior(ConstraintMode::SixDof),
        Series::IcpAltitudePrior(ConstraintMode::FourDof),
        Series::PriorOdometry,
    ];

    pub fn name(&self) -> String {
        match self {
            Series::PriorOdometry => "prior_odometry".into(),
            Series::Icp(m) => m.name().into(),
            Series::IcpAltitudePrior(m) => format!("{}_altitude", m.name()),
        }
    }

    fn uses_altitude(&self) -> bool {
        matches!(self, Series::Icp(ConstraintMode::ThreeDof) | Series::IcpAltitudePrior(_))
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "prior_odometry" {
            return Ok(Series::PriorOdometry);
        }
        if let Some(mode) = s.strip_suffix("_altitude") {
            return Ok(Series::IcpAltitudePrior(mode.parse()?));
        }
        Ok(Series::Icp(s.parse()?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub icp: IcpConfig,
    pub segment_distance: f64,
    /// Number of most recent registered scans forming the reference map.
    pub map_window: usize,
    pub series: Vec<Series>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            icp: IcpConfig::default(),
            segment_distance: DEFAULT_SEGMENT_DISTANCE,
            map_window: 20,
            series: Series::DEFAULT.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesResult {
    pub series: Series,
    /// Estimated sensor poses at every scan time.
    pub trajectory: Trajectory,
    /// Scans whose registration failed; the prior was used instead.
    pub failed: Vec<usize>,
    /// Registrations that flagged z as unobservable.
    pub degenerate_z: usize,
    pub report: RpeReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub n_scans: usize,
    /// Scans excluded from every report because some series failed there.
    pub excluded: Vec<usize>,
    pub results: Vec<SeriesResult>,
}

struct Run {
    poses: Vec<RigidTransform>,
    failed: Vec<usize>,
    degenerate_z: usize,
}

fn with_z(pose: &RigidTransform, z: Option<f64>) -> RigidTransform {
    let mut out = *pose;
    if let Some(z) = z {
        out.translation.z = z;
    }
    out
}

fn register_sequence(
    scans: &[PointCloud],
    prior: &[RigidTransform],
    altitudes: &[AltitudeReading],
    gravity: &nalgebra::Vector3<f64>,
    series: Series,
    cfg: &CompareConfig,
) -> Run {
    let mode = match series {
        Series::PriorOdometry => return Run { poses: prior.to_vec(), failed: Vec::new(), degenerate_z: 0 },
        Series::Icp(m) | Series::IcpAltitudePrior(m) => m,
    };
    let mut poses: Vec<RigidTransform> = Vec::with_capacity(scans.len());
    let mut failed = Vec::new();
    let mut degenerate_z = 0;
    let mut window: VecDeque<PointCloud> = VecDeque::with_capacity(cfg.map_window + 1);
    for (k, scan) in scans.iter().enumerate() {
        let altitude = series.uses_altitude().then_some(&altitudes[k]);
        let guess = match k {
            0 => prior[0],
            _ => poses[k - 1].compose(&prior[k - 1].inverse().compose(&prior[k])),
        };
        let fallback = with_z(&guess, altitude.map(|a| a.delta_z));
        let pose = if window.is_empty() {
            fallback
        } else {
            let mut map = PointCloud::empty(Frame::Map);
            for part in &window {
                map.extend_from(part).expect("map parts share a frame");
            }
            match icp(scan, &map, &guess, altitude, gravity, mode, &cfg.icp) {
                Ok(r) => {
                    if r.degenerate_directions.iter().any(|d| d == "r_z") {
                        degenerate_z += 1;
                    }
                    r.transform
                }
                Err(e) => {
                    log::debug!("{series} scan {k}: registration failed: {e}");
                    failed.push(k);
                    fallback
                }
            }
        };
        window.push_back(scan.transformed(&pose, Frame::Map));
        if window.len() > cfg.map_window {
            window.pop_front();
        }
        poses.push(pose);
    }
    Run { poses, failed, degenerate_z }
}

/// Runs the full pipeline for every configured series on one scenario:
/// barometer calibration and filtering, differential altitude, scan
/// rendering and scan-to-map registration. Scans where any series failed
/// are removed from every report.
pub fn compare_modes(scenario: &Scenario, cfg: &CompareConfig) -> Result<Comparison> {
    cfg.icp.validate()?;
    if cfg.map_window == 0 || cfg.series.is_empty() {
        return Err(Error::Config("map_window and the series list must be non-empty".into()));
    }
    let gt = &scenario.ground_truth;
    let consts = AtmosphereConstants::default();
    let pipeline = altitude_pipeline(gt, &scenario.rig, scenario.t_ambient, &consts)?;
    let dz: Vec<(f64, f64)> = pipeline.readings.iter().map(|r| (r.timestamp, r.delta_z)).collect();
    let altitudes = gt
        .trajectory
        .samples()
        .iter()
        .map(|(t, _)| {
            let delta_z = interpolate(&dz, *t).ok_or(Error::OutOfRange {
                timestamp: *t,
                start: dz[0].0,
                end: dz[dz.len() - 1].0,
            })?;
            let variance = pipeline.readings[0].variance;
            Ok(AltitudeReading { timestamp: *t, delta_z, variance })
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = simulate_prior(gt, &scenario.drift, &scenario.rig)?;
    let scans = gt
        .trajectory
        .samples()
        .par_iter()
        .enumerate()
        .map(|(k, (_, pose))| render_scan(&scenario.world, pose, &scenario.rig, k as u64))
        .collect::<Result<Vec<_>>>()?;
    let gravity = scenario.rig.measured_gravity();

    let runs: Vec<Run> = cfg
        .series
        .par_iter()
        .map(|&s| register_sequence(&scans, &prior, &altitudes, &gravity, s, cfg))
        .collect();
    let excluded: BTreeSet<usize> = runs.iter().flat_map(|r| r.failed.iter().copied()).collect();
    let truth = gt.trajectory.without(&excluded);
    let mut results = Vec::with_capacity(runs.len());
    for (series, run) in cfg.series.iter().zip(runs) {
        let samples = gt.trajectory.samples().iter().zip(&run.poses).map(|((t, _), p)| (*t, *p)).collect();
        let trajectory = Trajectory::new(samples)?;
        let report = z_rpe_masked(&trajectory.without(&excluded), &truth, cfg.segment_distance, &gt.masks)?;
        results.push(SeriesResult { series: *series, trajectory, failed: run.failed, degenerate_z: run.degenerate_z, report });
    }
    Ok(Comparison {
        scenario: scenario.name.clone(),
        seed: scenario.rig.seed,
        n_scans: scans.len(),
        excluded: excluded.into_iter().collect(),
        results,
    })
}

/// [`compare_modes`] on a named scenario for several seeds, in seed order.
pub fn compare_seeds(name: &str, seeds: &[u64], cfg: &CompareConfig) -> Result<Vec<Comparison>> {
    seeds.par_iter().map(|&seed| compare_modes(&scenario(name, seed)?, cfg)).collect()
}

/// Pools per-segment errors of each series across comparisons.
pub fn pool(comparisons: &[Comparison]) -> Result<Vec<(Series, RpeReport)>> {
    let Some(first) = comparisons.first() else {
        return Err(Error::InvalidInput("nothing to pool".into()));
    };
    first
        .results
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let segments = comparisons.iter().flat_map(|c| c.results[k].report.per_segment.iter().copied()).collect();
            Ok((r.series, RpeReport::from_segments(segments, r.report.segment_distance)?))
        })
        .collect()
}
