//! Point-to-plane ICP with 6, 4 or 3 optimized degrees of freedom.
//!
//! All three variants linearize the rotation about the map origin and
//! solve a small normal-equation system per iteration, then apply the
//! increment with the exact rotation so poses stay in SE(3).
//!
//! * [`ConstraintMode::SixDof`]: rotation vector and translation.
//! * [`ConstraintMode::FourDof`]: roll and pitch come from the gravity
//!   direction; yaw and the full translation are optimized.
//! * [`ConstraintMode::ThreeDof`]: as four, but z is pinned to the altitude
//!   reading and only `(yaw, x, y)` are optimized. Each row of the system is
//!   `a_k = [n_k^T (e_z x p_k), n_k^x, n_k^y]` with right-hand side
//!   `n_k^T (q_k - p_k)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::altimetry::AltitudeReading;
use crate::error::{Error, Result};
use crate::pointcloud::{exp_so3, gravity_rotation, rot_z, Correspondences, Frame, Matcher, PointCloud, RigidTransform};
use crate::Vec3;

/// Largest rotation applied in one iteration, radians.
pub const MAX_ROTATION_STEP: f64 = 0.1;

/// Eigenvalues of the normal matrix below this fraction of its trace mark
/// an unobservable direction.
pub const DEGENERACY_RATIO: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintMode {
    SixDof,
    FourDof,
    ThreeDof,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 3] = [ConstraintMode::SixDof, ConstraintMode::FourDof, ConstraintMode::ThreeDof];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintMode::SixDof => "six_dof",
            ConstraintMode::FourDof => "four_dof",
            ConstraintMode::ThreeDof => "three_dof",
        }
    }

    /// Names of the optimized parameters, in solve order.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            ConstraintMode::SixDof => &["alpha", "beta", "gamma", "r_x", "r_y", "r_z"],
            ConstraintMode::FourDof => &["gamma", "r_x", "r_y", "r_z"],
            ConstraintMode::ThreeDof => &["gamma", "r_x", "r_y"],
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConstraintMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode {s:?}, expected six_dof, four_dof or three_dof")))
    }
}

/// Yaw and horizontal translation increment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tau {
    pub gamma: f64,
    pub r_x: f64,
    pub r_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Radians.
    pub rotation_tol: f64,
    /// Meters.
    pub translation_tol: f64,
    /// Fraction of the largest point-to-plane residuals dropped per iteration.
    pub trim_ratio: f64,
    /// Meters.
    pub max_dist: f64,
    /// Tikhonov term added to the normal matrix.
    pub damping: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            rotation_tol: 1e-4,
            translation_tol: 1e-4,
            trim_ratio: 0.1,
            max_dist: 1.0,
            damping: 1e-9,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.rotation_tol > 0.0 && self.translation_tol > 0.0) {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        if !(0.0..0.5).contains(&self.trim_ratio) {
            return Err(Error::Config(format!("trim_ratio must be in [0, 0.5), got {}", self.trim_ratio)));
        }
        if !(self.max_dist >= 0.0) {
            return Err(Error::Config(format!("max_dist must be >= 0, got {}", self.max_dist)));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Config(format!("damping must be finite and >= 0, got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Sensor frame to map frame.
    pub transform: RigidTransform,
    /// Sum of squared point-to-plane residuals at `transform`, m^2.
    pub final_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters that were unobservable in the last iteration.
    pub degenerate_directions: Vec<String>,
}

/// Solution of the 3-DOF system with its unobservable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TauSolution {
    pub tau: Tau,
    pub degenerate: Vec<&'static str>,
}

/// Keeps all but the `trim_ratio` fraction of pairs with the largest
/// `|n_q^T (q - p)|`, preserving the input order of the survivors.
pub fn trim(points: &[Vec3], reference: &PointCloud, corr: &Correspondences, trim_ratio: f64) -> Correspondences {
    let k = corr.len();
    let drop = (trim_ratio * k as f64).floor() as usize;
    if drop == 0 || k == 0 {
        return corr.clone();
    }
    let keep = (k - drop).max(1);
    let residual = |&(i, j): &(usize, usize)| {
        let n = reference.normals()[j];
        n.dot(&(reference.points()[j] - points[i])).abs()
    };
    let mut order: Vec<(f64, usize)> = corr.pairs.iter().enumerate().map(|(idx, pair)| (residual(pair), idx)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = order[..keep].iter().map(|&(_, idx)| idx).collect();
    kept.sort_unstable();
    Correspondences {
        pairs: kept.iter().map(|&idx| corr.pairs[idx]).collect(),
        distances: kept.iter().map(|&idx| corr.distances[idx]).collect(),
    }
}

fn plane_error(points: &[Vec3], reference: &PointCloud, corr: &Correspondences) -> f64 {
    corr.pairs
        .iter()
        .map(|&(i, j)| {
            let r = reference.normals()[j].dot(&(points[i] - reference.points()[j]));
            r * r
        })
        .sum()
}

/// `sum_k (n_k^T (p_k - q_k))^2` over the given pairs, with the reading
/// already expressed in the reference frame.
pub fn point_to_plane_error(reading: &PointCloud, reference: &PointCloud, corr: &Correspondences) -> f64 {
    plane_error(reading.points(), reference, corr)
}

/// Solved increment and the indices of unobservable parameters.
struct Increment<const N: usize> {
    x: [f64; N],
    degenerate: Vec<usize>,
}

/// Solves `(sum a a^T + damping I) x = sum b a` restricted to the
/// observable eigen-directions of `sum a a^T`.
fn solve_normal_equations<const N: usize>(rows: impl Iterator<Item = ([f64; N], f64)>, damping: f64) -> Increment<N> {
    let mut h = [[0.0; N]; N];
    let mut g = [0.0; N];
    for (a, b) in rows {
        for r in 0..N {
            g[r] += b * a[r];
            for c in r..N {
                h[r][c] += a[r] * a[c];
            }
        }
    }
    let normal = DMatrix::from_fn(N, N, |r, c| if r <= c { h[r][c] } else { h[c][r] });
    let trace = normal.trace();
    if !(trace > 0.0) {
        return Increment { x: [0.0; N], degenerate: (0..N).collect() };
    }
    let eig = SymmetricEigen::new(normal);
    let mut x = [0.0; N];
    let mut degenerate = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lambda < DEGENERACY_RATIO * trace {
            let dominant = v.iamax();
            if !degenerate.contains(&dominant) {
                degenerate.push(dominant);
            }
            continue;
        }
        let proj: f64 = (0..N).map(|r| v[r] * g[r]).sum::<f64>() / (lambda + damping);
        for r in 0..N {
            x[r] += proj * v[r];
        }
    }
    degenerate.sort_unstable();
    Increment { x, degenerate }
}

fn three_dof_row(p: &Vec3, q: &Vec3, n: &Vec3) -> ([f64; 3], f64) {
    // n^T (e_z x p) = n_y p_x - n_x p_y
    ([n.y * p.x - n.x * p.y, n.x, n.y], n.dot(&(q - p)))
}

fn four_dof_row(p: &Vec3, q: &Vec3, n: &Vec3) -> ([f64; 4], f64) {
    ([n.y * p.x - n.x * p.y, n.x, n.y, n.z], n.dot(&(q - p)))
}

fn six_dof_row(p: &Vec3, q: &Vec3, n: &Vec3) -> ([f64; 6], f64) {
    let c = p.cross(n);
    ([c.x, c.y, c.z, n.x, n.y, n.z], n.dot(&(q - p)))
}

fn rows<'a, const N: usize>(
    points: &'a [Vec3],
    reference: &'a PointCloud,
    corr: &'a Correspondences,
    row: fn(&Vec3, &Vec3, &Vec3) -> ([f64; N], f64),
) -> impl Iterator<Item = ([f64; N], f64)> + 'a {
    corr.pairs
        .iter()
        .map(move |&(i, j)| row(&points[i], &reference.points()[j], &reference.normals()[j]))
}

/// One linearized 3-DOF step: trims the pairs, solves for `(yaw, x, y)`.
///
/// Rows whose system is entirely unobservable (every normal vertical) give
/// a zero increment with all three parameters flagged.
pub fn solve_tau(reading: &PointCloud, reference: &PointCloud, corr: &Correspondences, cfg: &IcpConfig) -> TauSolution {
    let kept = trim(reading.points(), reference, corr, cfg.trim_ratio);
    let inc = solve_normal_equations(rows(reading.points(), reference, &kept, three_dof_row), cfg.damping);
    let names = ConstraintMode::ThreeDof.parameters();
    TauSolution {
        tau: Tau { gamma: inc.x[0], r_x: inc.x[1], r_y: inc.x[2] },
        degenerate: inc.degenerate.iter().map(|&k| names[k]).collect(),
    }
}

/// Applies a 3-DOF increment: yaw about the map origin, then a horizontal shift.
pub fn apply_tau(pose: &RigidTransform, tau: &Tau) -> RigidTransform {
    let step = RigidTransform { rotation: rot_z(tau.gamma), translation: Vec3::new(tau.r_x, tau.r_y, 0.0) };
    step.compose(pose)
}

fn clamp_rotation<const N: usize>(x: &mut [f64; N], rotation: std::ops::Range<usize>) {
    let norm = x[rotation.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > MAX_ROTATION_STEP {
        let s = MAX_ROTATION_STEP / norm;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// `true` when `transform` maps the measured gravity direction onto -z.
pub fn keeps_gravity_vertical(transform: &RigidTransform, gravity_dir: &Vec3, tol: f64) -> bool {
    (transform.rotation * gravity_dir + Vec3::z()).amax() <= tol
}

/// Registers `reading` (sensor frame) against `map` starting from `prior`.
///
/// In the gravity-constrained modes the reading is first leveled with
/// `gravity_dir` and the prior only contributes its heading and position.
/// `altitude` pins z in [`ConstraintMode::ThreeDof`] and is required there;
/// in the other modes it only replaces the prior's z as starting value.
/// The map origin is the base-station altitude, so `altitude.delta_z` is the
/// map-frame z of the sensor.
pub fn icp(
    reading: &PointCloud,
    map: &PointCloud,
    prior: &RigidTransform,
    altitude: Option<&AltitudeReading>,
    gravity_dir: &Vec3,
    mode: ConstraintMode,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    cfg.validate()?;
    if mode == ConstraintMode::ThreeDof && altitude.is_none() {
        return Err(Error::Config("three_dof registration requires an altitude reading".into()));
    }
    if reading.is_empty() || map.is_empty() {
        return Err(Error::InvalidInput("cannot register an empty cloud".into()));
    }
    if map.frame() != Frame::Map {
        return Err(Error::InvalidInput(format!("map must be in the Map frame, got {:?}", map.frame())));
    }
    if !prior.is_valid(1e-6) {
        return Err(Error::InvalidInput("prior is not a rigid transform".into()));
    }
    if let Some(a) = altitude {
        if !a.delta_z.is_finite() {
            return Err(Error::InvalidInput("altitude is not finite".into()));
        }
    }

    let (leveling, mut pose) = match mode {
        ConstraintMode::SixDof => (nalgebra::Matrix3::identity(), *prior),
        ConstraintMode::FourDof | ConstraintMode::ThreeDof => {
            let leveling = gravity_rotation(gravity_dir)?;
            let heading = RigidTransform { rotation: prior.rotation * leveling.transpose(), translation: prior.translation };
            (leveling, RigidTransform::from_yaw(heading.yaw(), prior.translation))
        }
    };
    if let Some(a) = altitude {
        pose.translation.z = a.delta_z;
    }
    let body: Vec<Vec3> = reading.points().iter().map(|p| leveling * p).collect();

    let matcher = Matcher::new(map);
    let mut moved = vec![Vec3::zeros(); body.len()];
    let transform_into = |pose: &RigidTransform, out: &mut [Vec3]| {
        for (o, p) in out.iter_mut().zip(&body) {
            *o = pose.apply(p);
        }
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate: Vec<&'static str> = Vec::new();
    let names = mode.parameters();
    while iterations < cfg.max_iterations {
        transform_into(&pose, &mut moved);
        let corr = matcher.correspondences(&moved, cfg.max_dist)?;
        let corr = trim(&moved, map, &corr, cfg.trim_ratio);
        iterations += 1;
        let (rotation, translation) = match mode {
            ConstraintMode::ThreeDof => {
                let mut inc = solve_normal_equations(rows(&moved, map, &corr, three_dof_row), cfg.damping);
                clamp_rotation(&mut inc.x, 0..1);
                degenerate = inc.degenerate.iter().map(|&k| names[k]).collect();
                let tau = Tau { gamma: inc.x[0], r_x: inc.x[1], r_y: inc.x[2] };
                pose = apply_tau(&pose, &tau);
                (tau.gamma.abs(), tau.r_x.hypot(tau.r_y))
            }
            ConstraintMode::FourDof => {
                let mut inc = solve_normal_equations(rows(&moved, map, &corr, four_dof_row), cfg.damping);
                clamp_rotation(&mut inc.x, 0..1);
                degenerate = inc.degenerate.iter().map(|&k| names[k]).collect();
                let [gamma, x, y, z] = inc.x;
                let step = RigidTransform { rotation: rot_z(gamma), translation: Vec3::new(x, y, z) };
                pose = step.compose(&pose);
                (gamma.abs(), step.translation.norm())
            }
            ConstraintMode::SixDof => {
                let mut inc = solve_normal_equations(rows(&moved, map, &corr, six_dof_row), cfg.damping);
                clamp_rotation(&mut inc.x, 0..3);
                degenerate = inc.degenerate.iter().map(|&k| names[k]).collect();
                let omega = Vec3::new(inc.x[0], inc.x[1], inc.x[2]);
                let step = RigidTransform { rotation: exp_so3(&omega), translation: Vec3::new(inc.x[3], inc.x[4], inc.x[5]) };
                pose = step.compose(&pose);
                (omega.norm(), step.translation.norm())
            }
        };
        if rotation < cfg.rotation_tol && translation < cfg.translation_tol {
            converged = true;
            break;
        }
    }

    let transform = pose.compose(&RigidTransform { rotation: leveling, translation: Vec3::zeros() });
    transform_into(&pose, &mut moved);
    let corr = matcher.correspondences(&moved, cfg.max_dist)?;
    let corr = trim(&moved, map, &corr, cfg.trim_ratio);
    let final_error = plane_error(&moved, map, &corr);

    Ok(IcpResult {
        transform,
        final_error,
        iterations,
        converged,
        degenerate_directions: degenerate.into_iter().map(str::to_string).collect(),
    })
}
