//! Deterministic synthetic worlds, lidar scans, barometer pairs and prior
//! odometry.
//!
//! Every generator draws from a ChaCha8 stream derived from the rig seed
//! and a fixed stream id, so outputs depend only on `(inputs, seed)` and
//! scans can be rendered in any order or concurrently.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::altimetry::{interpolate, AtmosphereConstants};
use crate::barometry::PressureSample;
use crate::error::{Error, Result};
use crate::evaluation::Trajectory;
use crate::pointcloud::{exp_so3, Frame, PointCloud, RigidTransform};
use crate::{Mat3, Vec3};

/// Barometer sampling rate, Hz.
pub const BARO_RATE: f64 = 10.0;
/// Base-station sensor temperature, degrees C.
pub const BASE_TEMPERATURE: f64 = 20.0;
/// Rover sensor warm-up: start and end temperature (degrees C) and time
/// constant (s).
pub const WARMUP_START: f64 = 20.0;
pub const WARMUP_END: f64 = 45.0;
pub const WARMUP_TAU: f64 = 600.0;
/// Ceiling height as a fraction of the floor-to-floor height.
pub const CEILING_FRACTION: f64 = 0.625;
/// Lidar height above the floor surface, m.
pub const MOUNT_HEIGHT: f64 = 0.5;
pub const SHAFT_FACETS: usize = 24;

const BARO_STREAM: u64 = u64::MAX - 1;
const PRIOR_STREAM: u64 = u64::MAX - 2;
const CAMPAIGN_STREAM: u64 = u64::MAX - 16;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// A bounded plane: the rectangle `center + a u + b v` with
/// `|a| <= half_u`, `|b| <= half_v` and `normal = u x v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    pub center: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
}

impl Surface {
    fn new(center: Vec3, u: Vec3, v: Vec3, half_u: f64, half_v: f64) -> Self {
        Self { center, normal: u.cross(&v), u, v, half_u, half_v }
    }

    /// Signed distance of `x` to the plane.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.normal.dot(&(x - self.center))
    }

    fn contains(&self, x: &Vec3, slack: f64) -> bool {
        let d = x - self.center;
        self.u.dot(&d).abs() <= self.half_u + slack && self.v.dot(&d).abs() <= self.half_v + slack
    }

    /// `true` if the open segment `from -> to` crosses this rectangle.
    fn blocks(&self, from: &Vec3, to: &Vec3) -> bool {
        let da = self.signed_distance(from);
        let db = self.signed_distance(to);
        if da * db >= 0.0 {
            return false;
        }
        let s = da / (da - db);
        if s <= 1e-9 || s >= 1.0 - 1e-9 {
            return false;
        }
        self.contains(&(from + s * (to - from)), 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub surfaces: Vec<Surface>,
    /// Floor-surface heights, m; empty for shafts.
    pub floors: Vec<f64>,
}

/// Parameters of [`build_world`], also the JSON world-spec file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSpec {
    Corridor(CorridorSpec),
    Shaft(ShaftSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSpec {
    pub floors: usize,
    pub floor_height: f64,
    pub corridor_length: f64,
    pub corridor_width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaftSpec {
    pub shaft_depth: f64,
    pub shaft_radius: f64,
}

impl WorldSpec {
    /// Parses and validates a world spec file.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: WorldSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<(&str, f64)> = match *self {
            WorldSpec::Corridor(CorridorSpec { floors, floor_height, corridor_length, corridor_width }) => {
                if floors == 0 {
                    return Err(Error::Config("floors must be >= 1".into()));
                }
                vec![("floor_height", floor_height), ("corridor_length", corridor_length), ("corridor_width", corridor_width)]
            }
            WorldSpec::Shaft(ShaftSpec { shaft_depth, shaft_radius }) => vec![("shaft_depth", shaft_depth), ("shaft_radius", shaft_radius)],
        };
        for (name, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Corridors run along +x from 0 to `corridor_length`, centred on y = 0,
/// one level per floor going down from z = 0. Each level has a floor, a
/// ceiling and two side walls; there are no end walls and no stairs. A
/// shaft is a 24-facet vertical prism around the z axis from 0 down to
/// `-shaft_depth`.
pub fn build_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    match *spec {
        WorldSpec::Corridor(CorridorSpec { floors, floor_height, corridor_length, corridor_width }) => {
            let ceiling = CEILING_FRACTION * floor_height;
            let half_len = corridor_length / 2.0;
            let half_w = corridor_width / 2.0;
            let mut surfaces = Vec::with_capacity(4 * floors);
            let heights: Vec<f64> = (0..floors).map(|f| -(f as f64) * floor_height).collect();
            for &zf in &heights {
                surfaces.push(Surface::new(Vec3::new(half_len, 0.0, zf), x, y, half_len, half_w));
                surfaces.push(Surface::new(Vec3::new(half_len, 0.0, zf + ceiling), y, x, half_w, half_len));
                let mid = zf + ceiling / 2.0;
                surfaces.push(Surface::new(Vec3::new(half_len, half_w, mid), x, z, half_len, ceiling / 2.0));
                surfaces.push(Surface::new(Vec3::new(half_len, -half_w, mid), z, x, ceiling / 2.0, half_len));
            }
            Ok(World { surfaces, floors: heights })
        }
        WorldSpec::Shaft(ShaftSpec { shaft_depth, shaft_radius }) => {
            let step = std::f64::consts::TAU / SHAFT_FACETS as f64;
            let apothem = shaft_radius * (step / 2.0).cos();
            let half_u = shaft_radius * (step / 2.0).sin();
            let surfaces = (0..SHAFT_FACETS)
                .map(|k| {
                    let (s, c) = (k as f64 * step).sin_cos();
                    let outward = Vec3::new(c, s, 0.0);
                    let tangent = Vec3::new(-s, c, 0.0);
                    // z x tangent points at the axis
                    Surface::new(apothem * outward - z * shaft_depth / 2.0, z, tangent, shaft_depth / 2.0, half_u)
                })
                .collect();
            Ok(World { surfaces, floors: Vec::new() })
        }
    }
}

/// Additive atmospheric pressure drift shared by both barometers:
/// `rate t + amplitude sin(2 pi t / period)` Pa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphericDrift {
    /// Pa/s.
    pub rate: f64,
    /// Pa.
    pub amplitude: f64,
    /// s.
    pub period: f64,
}

impl AtmosphericDrift {
    pub const NONE: AtmosphericDrift = AtmosphericDrift { rate: 0.0, amplitude: 0.0, period: 1.0 };

    pub fn at(&self, t: f64) -> f64 {
        let wave = if self.amplitude == 0.0 { 0.0 } else { self.amplitude * (std::f64::consts::TAU * t / self.period).sin() };
        self.rate * t + wave
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorRigSim {
    /// m.
    pub lidar_range: f64,
    /// Range noise, m.
    pub lidar_sigma: f64,
    pub points_per_scan: usize,
    /// Pa.
    pub baro_sigma: f64,
    /// Rover bias polynomial in sensor temperature (degrees C), Pa,
    /// lowest order first.
    pub baro_temp_bias: Vec<f64>,
    pub atm_drift: AtmosphericDrift,
    /// Pitch error of the measured gravity direction, rad.
    pub imu_tilt_bias: f64,
    pub seed: u64,
}

impl Default for SensorRigSim {
    fn default() -> Self {
        Self {
            lidar_range: 30.0,
            lidar_sigma: 0.01,
            points_per_scan: 4000,
            baro_sigma: 1.5,
            baro_temp_bias: vec![-40.0, 2.0],
            atm_drift: AtmosphericDrift { rate: 0.1, amplitude: 0.0, period: 1.0 },
            imu_tilt_bias: 0.0,
            seed: 0,
        }
    }
}

impl SensorRigSim {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lidar_sigma", self.lidar_sigma), ("baro_sigma", self.baro_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lidar_range > 0.0 && self.lidar_range.is_finite()) {
            return Err(Error::Config(format!("lidar_range must be finite and > 0, got {}", self.lidar_range)));
        }
        if self.points_per_scan == 0 {
            return Err(Error::Config("points_per_scan must be >= 1".into()));
        }
        if !self.atm_drift.period.is_finite() || self.atm_drift.period <= 0.0 {
            return Err(Error::Config("atm_drift period must be > 0".into()));
        }
        Ok(())
    }

    pub fn temp_bias(&self, t_sensor: f64) -> f64 {
        self.baro_temp_bias.iter().rev().fold(0.0, |acc, c| acc * t_sensor + c)
    }

    /// Orientation error between the true level frame and the frame the
    /// IMU believes is level.
    pub fn tilt(&self) -> Mat3 {
        exp_so3(&Vec3::new(0.0, self.imu_tilt_bias, 0.0))
    }

    /// Gravity direction reported by the IMU, in the sensor frame.
    pub fn measured_gravity(&self) -> Vec3 {
        self.tilt().transpose() * -Vec3::z()
    }
}

/// Rover sensor temperature, degrees C, `t` seconds after power-on.
pub fn sensor_temperature(t: f64) -> f64 {
    WARMUP_END - (WARMUP_END - WARMUP_START) * (-t / WARMUP_TAU).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Sensor poses at scan times.
    pub trajectory: Trajectory,
    /// Sensor height above the base station, sampled densely, `(t, z)`.
    pub heights: Vec<(f64, f64)>,
    pub floor_heights: Vec<f64>,
    /// Time windows excluded from evaluation (elevator rides).
    pub masks: Vec<(f64, f64)>,
}

impl GroundTruth {
    pub fn duration(&self) -> (f64, f64) {
        let first = self.heights.first().map_or(0.0, |h| h.0);
        let last = self.heights.last().map_or(0.0, |h| h.0);
        (first, last)
    }
}

/// Samples `points_per_scan` points on the surfaces visible from `pose`,
/// returned in the sensor frame with normals facing the sensor.
///
/// Surfaces are picked with probability proportional to their area inside
/// the range sphere's bounding box; candidate points beyond range or behind
/// another surface are rejected. `scan_index` selects the random stream.
pub fn render_scan(world: &World, pose: &RigidTransform, rig: &SensorRigSim, scan_index: u64) -> Result<PointCloud> {
    rig.validate()?;
    let origin = pose.translation;
    let range = rig.lidar_range;
    // (surface, u interval, v interval, area)
    let mut patches = Vec::new();
    for s in &world.surfaces {
        let d = s.signed_distance(&origin);
        if d.abs() >= range {
            continue;
        }
        let radius = (range * range - d * d).sqrt();
        let rel = origin - s.center;
        let (cu, cv) = (s.u.dot(&rel), s.v.dot(&rel));
        let (u0, u1) = ((cu - radius).max(-s.half_u), (cu + radius).min(s.half_u));
        let (v0, v1) = ((cv - radius).max(-s.half_v), (cv + radius).min(s.half_v));
        if u1 > u0 && v1 > v0 {
            patches.push((s, (u0, u1), (v0, v1), (u1 - u0) * (v1 - v0)));
        }
    }
    let empty = || Error::EmptyScan([origin.x, origin.y, origin.z]);
    if patches.is_empty() {
        return Err(empty());
    }
    let total: f64 = patches.iter().map(|p| p.3).sum();
    let mut cumulative = Vec::with_capacity(patches.len());
    let mut acc = 0.0;
    for p in &patches {
        acc += p.3 / total;
        cumulative.push(acc);
    }

    let mut rng = rng_for(rig.seed, scan_index);
    let to_sensor = pose.inverse();
    let mut points = Vec::with_capacity(rig.points_per_scan);
    let mut normals = Vec::with_capacity(rig.points_per_scan);
    let max_attempts = 50 * rig.points_per_scan;
    let mut attempts = 0;
    while points.len() < rig.points_per_scan && attempts < max_attempts {
        attempts += 1;
        let pick: f64 = rng.random_range(0.0..1.0);
        let idx = cumulative.partition_point(|&c| c < pick).min(patches.len() - 1);
        let (s, (u0, u1), (v0, v1), _) = patches[idx];
        let a = rng.random_range(u0..=u1);
        let b = rng.random_range(v0..=v1);
        let target = s.center + a * s.u + b * s.v;
        let ray = target - origin;
        let r = ray.norm();
        if r >= range || r < 1e-6 {
            continue;
        }
        if world.surfaces.iter().any(|other| !std::ptr::eq(other, s) && other.blocks(&origin, &target)) {
            continue;
        }
        let noise = gaussian(&mut rng, rig.lidar_sigma);
        let hit = origin + ray * ((r + noise) / r);
        let facing = if s.normal.dot(&ray) > 0.0 { -s.normal } else { s.normal };
        points.push(to_sensor.apply(&hit));
        normals.push((to_sensor.rotation * facing).normalize());
    }
    if points.is_empty() {
        return Err(empty());
    }
    PointCloud::new(points, normals, Frame::Sensor)
}

/// Base and rover pressure logs at [`BARO_RATE`] over the ground-truth span.
///
/// Rover: `p_std exp(-g z / (R_dry T)) + drift + bias(t_sensor) + noise`.
/// Base: `p_std + drift + noise` at a constant [`BASE_TEMPERATURE`].
pub fn simulate_baro(
    gt: &GroundTruth,
    rig: &SensorRigSim,
    t_ambient: f64,
    consts: &AtmosphereConstants,
) -> Result<(Vec<PressureSample>, Vec<PressureSample>)> {
    rig.validate()?;
    consts.validate()?;
    if gt.heights.is_empty() {
        return Err(Error::InvalidInput("ground truth has no height samples".into()));
    }
    if !(t_ambient > 0.0 && t_ambient.is_finite()) {
        return Err(Error::InvalidInput(format!("ambient temperature must be > 0 K, got {t_ambient}")));
    }
    let (start, end) = gt.duration();
    let n = ((end - start) * BARO_RATE + 1e-9).floor() as usize + 1;
    let mut rng = rng_for(rig.seed, BARO_STREAM);
    let h = consts.scale_height(t_ambient);
    let mut base = Vec::with_capacity(n);
    let mut rover = Vec::with_capacity(n);
    for k in 0..n {
        let t = start + k as f64 / BARO_RATE;
        let z = interpolate(&gt.heights, t.min(end)).expect("t within ground-truth span");
        let drift = rig.atm_drift.at(t);
        let t_sensor = sensor_temperature(t - start);
        let p_base = consts.p_std + drift + gaussian(&mut rng, rig.baro_sigma);
        let p_rover = consts.p_std * (-z / h).exp() + drift + rig.temp_bias(t_sensor) + gaussian(&mut rng, rig.baro_sigma);
        base.push(PressureSample { timestamp: t, p_raw: p_base, t: BASE_TEMPERATURE, sensor_id: "base".into() });
        rover.push(PressureSample { timestamp: t, p_raw: p_rover, t: t_sensor, sensor_id: "rover".into() });
    }
    Ok((base, rover))
}

/// A chamber calibration campaign: `n` samples with reference pressure in
/// [90, 110] kPa and temperature in [5, 50] degrees C. The raw reading adds
/// `bias(t)` and Gaussian noise. `channel` selects an independent stream;
/// the chamber clock ticks once per second.
pub fn calibration_campaign(rig: &SensorRigSim, sensor_id: &str, bias: &[f64], n: usize, channel: u64) -> Vec<(PressureSample, f64)> {
    let mut rng = rng_for(rig.seed, CAMPAIGN_STREAM - channel);
    (0..n)
        .map(|k| {
            let reference = rng.random_range(90_000.0..110_000.0);
            let t = rng.random_range(5.0..50.0);
            let b = bias.iter().rev().fold(0.0, |acc, c| acc * t + c);
            let p_raw = reference + b + gaussian(&mut rng, rig.baro_sigma);
            let sample = PressureSample { timestamp: k as f64, p_raw, t, sensor_id: sensor_id.into() };
            (sample, reference)
        })
        .collect()
}

/// Per-meter random-walk drift rates of the prior odometry.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DriftRates {
    /// m per sqrt(m) travelled.
    pub xy: f64,
    pub z: f64,
    /// rad per sqrt(m) travelled.
    pub yaw: f64,
}

/// Prior odometry: ground-truth increments with Gaussian noise of standard
/// deviation `rate sqrt(ds)` per step of length `ds`, so the accumulated
/// error after distance `s` has standard deviation `rate sqrt(s)`. Poses
/// carry the rig's IMU tilt error.
pub fn simulate_prior(gt: &GroundTruth, rates: &DriftRates, rig: &SensorRigSim) -> Result<Vec<RigidTransform>> {
    for (name, v) in [("xy", rates.xy), ("z", rates.z), ("yaw", rates.yaw)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} drift rate must be finite and >= 0, got {v}")));
        }
    }
    let poses = gt.trajectory.samples();
    let Some(first) = poses.first() else {
        return Ok(Vec::new());
    };
    let mut rng = rng_for(rig.seed, PRIOR_STREAM);
    let tilt = RigidTransform { rotation: rig.tilt(), translation: Vec3::zeros() };
    let mut current = first.1;
    let mut out = Vec::with_capacity(poses.len());
    out.push(current.compose(&tilt));
    for w in poses.windows(2) {
        let step = w[0].1.inverse().compose(&w[1].1);
        let ds = step.translation.norm();
        let scale = ds.sqrt();
        let yaw = gaussian(&mut rng, rates.yaw * scale);
        let dx = gaussian(&mut rng, rates.xy * scale);
        let dy = gaussian(&mut rng, rates.xy * scale);
        let dz = gaussian(&mut rng, rates.z * scale);
        let noisy = RigidTransform {
            rotation: crate::pointcloud::rot_z(yaw) * step.rotation,
            translation: step.translation + Vec3::new(dx, dy, dz),
        };
        current = current.compose(&noisy);
        out.push(current.compose(&tilt));
    }
    Ok(out)
}

/// A complete synthetic experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub world: World,
    pub ground_truth: GroundTruth,
    pub rig: SensorRigSim,
    pub drift: DriftRates,
    /// K.
    pub t_ambient: f64,
}

pub const DEFAULT_T_AMBIENT: f64 = 293.15;

/// Corridor floors traversed back and forth: 1 m/s, one scan per second,
/// an elevator ride of `elevator_time` seconds between floors (masked).
pub fn corridor_ground_truth(world: &World, corridor_length: f64, margin: f64, elevator_time: f64) -> Result<GroundTruth> {
    if world.floors.is_empty() {
        return Err(Error::InvalidInput("corridor trajectory needs at least one floor".into()));
    }
    if !(corridor_length > 2.0 * margin + 1.0) || !(elevator_time > 0.0) {
        return Err(Error::InvalidInput("corridor too short for the margins, or elevator_time <= 0".into()));
    }
    let steps = (corridor_length - 2.0 * margin).floor() as usize;
    let mut samples = Vec::new();
    let mut heights: Vec<(f64, f64)> = Vec::new();
    let mut masks = Vec::new();
    let mut t = 0.0;
    for (f, &zf) in world.floors.iter().enumerate() {
        let z = zf + MOUNT_HEIGHT;
        let forward = f % 2 == 0;
        let yaw = if forward { 0.0 } else { std::f64::consts::PI };
        if f > 0 {
            let (prev_t, _) = *heights.last().expect("previous floor recorded");
            masks.push((prev_t, prev_t + elevator_time));
            t = prev_t + elevator_time;
        }
        for k in 0..=steps {
            let x = if forward { margin + k as f64 } else { margin + steps as f64 - k as f64 };
            let ts = t + k as f64;
            samples.push((ts, RigidTransform::from_yaw(yaw, Vec3::new(x, 0.0, z))));
            heights.push((ts, z));
        }
    }
    // Densify heights so the barometer sees a smooth elevator ride.
    let mut dense = Vec::with_capacity(heights.len() * 10);
    for w in heights.windows(2) {
        let (t0, z0) = w[0];
        let (t1, z1) = w[1];
        let n = ((t1 - t0) * BARO_RATE).round().max(1.0) as usize;
        for k in 0..n {
            let a = k as f64 / n as f64;
            dense.push((t0 + a * (t1 - t0), z0 + a * (z1 - z0)));
        }
    }
    dense.push(*heights.last().expect("non-empty"));
    Ok(GroundTruth {
        trajectory: Trajectory::new(samples)?,
        heights: dense,
        floor_heights: world.floors.clone(),
        masks,
    })
}

/// Descent along the axis of a shaft: 0.5 m/s with a scan every 2 s from
/// 1.5 m below the rim to 1.5 m above the bottom, on a slow spiral of
/// 0.3 m radius with a yaw rate of 0.05 rad per scan.
pub fn shaft_ground_truth(shaft_depth: f64) -> Result<GroundTruth> {
    if !(shaft_depth >= 8.0) {
        return Err(Error::InvalidInput(format!("shaft must be at least 8 m deep, got {shaft_depth}")));
    }
    let n = (shaft_depth - 3.0).floor() as usize + 1;
    let samples = (0..n)
        .map(|k| {
            let phase = 0.2 * k as f64;
            let pos = Vec3::new(0.3 * phase.cos(), 0.3 * phase.sin(), -1.5 - k as f64);
            (2.0 * k as f64, RigidTransform::from_yaw(0.05 * k as f64, pos))
        })
        .collect();
    let heights = (0..=((n - 1) as f64 * 2.0 * BARO_RATE).round() as usize)
        .map(|k| {
            let t = k as f64 / BARO_RATE;
            (t, -1.5 - t / 2.0)
        })
        .collect();
    Ok(GroundTruth { trajectory: Trajectory::new(samples)?, heights, floor_heights: Vec::new(), masks: Vec::new() })
}

/// Builds a scenario around any world spec with the default rig: 1000
/// points per scan, prior drift 0.02 m/sqrt(m) in z, 0.01 in xy and
/// 0.001 rad/sqrt(m) in yaw. Corridors are walked with 2 m margins and
/// 20 s elevator rides, and carry a 0.02 rad IMU tilt error.
pub fn scenario_from_spec(name: &str, spec: &WorldSpec, seed: u64) -> Result<Scenario> {
    let world = build_world(spec)?;
    let (ground_truth, tilt) = match spec {
        WorldSpec::Corridor(c) => (corridor_ground_truth(&world, c.corridor_length, 2.0, 20.0)?, 0.02),
        WorldSpec::Shaft(s) => (shaft_ground_truth(s.shaft_depth)?, 0.0),
    };
    Ok(Scenario {
        name: name.into(),
        world,
        ground_truth,
        rig: SensorRigSim { points_per_scan: 1000, imu_tilt_bias: tilt, seed, ..Default::default() },
        drift: DriftRates { xy: 0.01, z: 0.02, yaw: 0.001 },
        t_ambient: DEFAULT_T_AMBIENT,
    })
}

pub const CORRIDOR3: WorldSpec =
    WorldSpec::Corridor(CorridorSpec { floors: 3, floor_height: 4.0, corridor_length: 104.0, corridor_width: 3.0 });
pub const SHAFT: WorldSpec = WorldSpec::Shaft(ShaftSpec { shaft_depth: 40.0, shaft_radius: 2.0 });

/// Three floors 4 m apart, 100 m walked per floor.
pub fn corridor3(seed: u64) -> Result<Scenario> {
    scenario_from_spec("corridor3", &CORRIDOR3, seed)
}

/// A 40 m deep shaft of 2 m radius.
pub fn shaft(seed: u64) -> Result<Scenario> {
    scenario_from_spec("shaft", &SHAFT, seed)
}

/// Scenario by name: `corridor3` or `shaft`.
pub fn scenario(name: &str, seed: u64) -> Result<Scenario> {
    match name {
        "corridor3" => corridor3(seed),
        "shaft" => shaft(seed),
        other => Err(Error::InvalidInput(format!("unknown scenario {other:?}, expected corridor3 or shaft"))),
    }
}

/// A static rover alternating between z = 0 and z = `step` every `dwell`
/// seconds, `n_steps` times. Has heights only, no scan poses.
pub fn step_profile(n_steps: usize, step: f64, dwell: f64) -> Result<GroundTruth> {
    if n_steps == 0 || !(dwell > 0.0) || !step.is_finite() {
        return Err(Error::InvalidInput("step profile needs n_steps >= 1, dwell > 0 and a finite step".into()));
    }
    let per_window = (dwell * BARO_RATE).round() as usize;
    let mut heights = Vec::with_capacity((n_steps + 1) * per_window);
    for w in 0..=n_steps {
        let z = if w % 2 == 1 { step } else { 0.0 };
        for k in 0..per_window {
            heights.push(((w * per_window + k) as f64 / BARO_RATE, z));
        }
    }
    Ok(GroundTruth { trajectory: Trajectory::default(), heights, floor_heights: Vec::new(), masks: Vec::new() })
}
