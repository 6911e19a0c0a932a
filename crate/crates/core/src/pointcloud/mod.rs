//! Point clouds with normals, rigid transforms and correspondence search.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

/// Coordinate frame a cloud is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    Sensor,
    GravityAligned,
    Map,
}

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Rotation by `angle` about +z. The third row and column are exact.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation matrix of the rotation vector `omega` (axis times angle).
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    nalgebra::Rotation3::new(*omega).into_inner()
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
///
/// When the two are antiparallel (within 1e-9) the half turn about +x is
/// returned, or about +y if `from` lies along x.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Mat3 {
    let v = from.cross(to);
    let c = from.dot(to);
    if 1.0 + c < 1e-9 {
        let axis = if from.cross(&Vec3::x()).norm() > 1e-6 { Vec3::x() } else { Vec3::y() };
        return exp_so3(&(axis * std::f64::consts::PI));
    }
    let vx = v.cross_matrix();
    Mat3::identity() + vx + vx * vx / (1.0 + c)
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Checked constructor: `C^T C = I` and `det C = 1` within 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let t = Self { rotation, translation };
        if !t.is_valid(1e-9) {
            return Err(Error::InvalidInput("rotation is not orthonormal with det +1".into()));
        }
        Ok(t)
    }

    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self { rotation: rot_z(yaw), translation }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let c = &self.rotation;
        c.iter().chain(self.translation.iter()).all(|v| v.is_finite())
            && (c.transpose() * c - Mat3::identity()).amax() <= tol
            && (c.determinant() - 1.0).abs() <= tol
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Heading of the body x axis about world z.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Unit quaternion `[qx, qy, qz, qw]` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn from_quaternion(q: [f64; 4], translation: Vec3) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        if !(quat.norm() > 0.0) {
            return Err(Error::InvalidInput("zero quaternion".into()));
        }
        let unit = nalgebra::UnitQuaternion::from_quaternion(quat);
        Self::new(unit.to_rotation_matrix().into_inner(), translation)
    }
}

/// Points with unit normals, all in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>, frame: Frame) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        for (k, (p, n)) in points.iter().zip(&normals).enumerate() {
            if !p.iter().chain(n.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("point {k} is not finite")));
            }
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("normal {k} is not unit length ({})", n.norm())));
            }
        }
        Ok(Self { points, normals, frame })
    }

    pub fn empty(frame: Frame) -> Self {
        Self { points: Vec::new(), normals: Vec::new(), frame }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The cloud moved by `transform`, normals rotated along, retagged `frame`.
    pub fn transformed(&self, transform: &RigidTransform, frame: Frame) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| transform.apply(p)).collect(),
            normals: self.normals.iter().map(|n| (transform.rotation * n).normalize()).collect(),
            frame,
        }
    }

    /// Appends another cloud in the same frame.
    pub fn extend_from(&mut self, other: &PointCloud) -> Result<()> {
        if other.frame != self.frame {
            return Err(Error::InvalidInput(format!(
                "cannot merge a {:?} cloud into a {:?} cloud",
                other.frame, self.frame
            )));
        }
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
        Ok(())
    }
}

/// Result of [`estimate_normals`]: the usable points with their normals and
/// the input indices whose neighbourhood was degenerate.
#[derive(Clone, Debug)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Input index of each point kept in `cloud`.
    pub kept: Vec<usize>,
    /// Input indices dropped for a rank-deficient neighbourhood.
    pub degenerate: Vec<usize>,
}

/// Neighbourhood size used when a cloud file comes without normals.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 10;

/// Plane normals from the covariance of each point's `k` nearest
/// neighbours, oriented towards the frame origin.
pub fn estimate_normals(points: &[Vec3], frame: Frame, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("need k >= 3 neighbours, got {k}")));
    }
    if points.len() < k + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} points for k = {k}, got {}",
            k + 1,
            points.len()
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput(format!("point {i} is not finite")));
    }
    let tree = KdTree::new(points);
    let mut kept = Vec::new();
    let mut degenerate = Vec::new();
    let mut out_points = Vec::new();
    let mut out_normals = Vec::new();
    for (i, p) in points.iter().enumerate() {
        // The point itself plus its k neighbours.
        let hood = tree.nearest_k(p, k + 1);
        let mean = hood.iter().map(|&(j, _)| points[j]).sum::<Vec3>() / hood.len() as f64;
        let cov = hood.iter().fold(Mat3::zeros(), |acc, &(j, _)| {
            let d = points[j] - mean;
            acc + d * d.transpose()
        });
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if !(l_mid > 1e-12 * l_max) || l_max <= 0.0 {
            degenerate.push(i);
            continue;
        }
        let mut n: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
        if n.dot(&(-p)) < 0.0 {
            n = -n;
        }
        kept.push(i);
        out_points.push(*p);
        out_normals.push(n);
    }
    Ok(NormalEstimate { cloud: PointCloud { points: out_points, normals: out_normals, frame }, kept, degenerate })
}

/// Rotates a sensor cloud so the measured gravity direction points along -z.
pub fn gravity_align(cloud: &PointCloud, gravity_dir: &Vec3) -> Result<(PointCloud, RigidTransform)> {
    let rotation = gravity_rotation(gravity_dir)?;
    let transform = RigidTransform { rotation, translation: Vec3::zeros() };
    Ok((cloud.transformed(&transform, Frame::GravityAligned), transform))
}

/// The minimal rotation taking `gravity_dir` to (0, 0, -1).
pub fn gravity_rotation(gravity_dir: &Vec3) -> Result<Mat3> {
    if !gravity_dir.iter().all(|v| v.is_finite()) || (gravity_dir.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "gravity direction must be a unit vector, got norm {}",
            gravity_dir.norm()
        )));
    }
    Ok(rotation_between(gravity_dir, &-Vec3::z()))
}

/// Matched `(reading index, reference index)` pairs and their distances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correspondences {
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Nearest-neighbour index over a reference cloud.
#[derive(Debug)]
pub struct Matcher {
    tree: KdTree,
}

impl Matcher {
    pub fn new(reference: &PointCloud) -> Self {
        Self { tree: KdTree::new(reference.points()) }
    }

    /// Nearest reference point of every query point, dropping pairs
    /// farther than `max_dist`.
    pub fn correspondences(&self, queries: &[Vec3], max_dist: f64) -> Result<Correspondences> {
        let max_d2 = max_dist * max_dist;
        let mut out = Correspondences::default();
        for (i, q) in queries.iter().enumerate() {
            if let Some((j, d2)) = self.tree.nearest(q) {
                if d2 <= max_d2 {
                    out.pairs.push((i, j));
                    out.distances.push(d2.sqrt());
                }
            }
        }
        if out.is_empty() {
            return Err(Error::NoOverlap { max_dist });
        }
        Ok(out)
    }
}

/// Nearest reference point for every reading point within `max_dist`.
pub fn match_clouds(reading: &PointCloud, reference: &PointCloud, max_dist: f64) -> Result<Correspondences> {
    if reading.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput("cannot match an empty cloud".into()));
    }
    if reading.frame() != reference.frame() {
        return Err(Error::InvalidInput(format!(
            "reading is in the {:?} frame but reference is in the {:?} frame",
            reading.frame(),
            reference.frame()
        )));
    }
    if max_dist.is_nan() || max_dist < 0.0 {
        return Err(Error::InvalidInput(format!("max_dist must be >= 0, got {max_dist}")));
    }
    Matcher::new(reference).correspondences(reading.points(), max_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        let n = points.len();
        PointCloud::new(points, vec![Vec3::z(); n], Frame::Map).unwrap()
    }

    #[test]
    fn rejects_bad_normals() {
        assert!(PointCloud::new(vec![Vec3::zeros()], vec![Vec3::new(0.0, 0.0, 2.0)], Frame::Map).is_err());
        assert!(PointCloud::new(vec![Vec3::zeros()], vec![], Frame::Map).is_err());
        assert!(PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![Vec3::z()], Frame::Map).is_err());
    }

    #[test]
    fn transform_algebra() {
        let a = RigidTransform::from_yaw(0.3, Vec3::new(1.0, 2.0, 3.0));
        let b = RigidTransform { rotation: exp_so3(&Vec3::new(0.1, -0.2, 0.05)), translation: Vec3::new(-1.0, 0.5, 0.0) };
        let p = Vec3::new(0.3, -0.7, 2.0);
        assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
        assert!((a.inverse().apply(&a.apply(&p)) - p).norm() < 1e-12);
        assert!((a.yaw() - 0.3).abs() < 1e-12);
        let q = b.quaternion();
        let back = RigidTransform::from_quaternion(q, b.translation).unwrap();
        assert!((back.rotation - b.rotation).amax() < 1e-12);
        assert!(RigidTransform::new(Mat3::identity() * 2.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn gravity_already_down_is_identity() {
        let c = cloud(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let (aligned, t) = gravity_align(&c, &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(t.rotation, Mat3::identity());
        assert_eq!(aligned.frame(), Frame::GravityAligned);
        assert_eq!(aligned.points()[0], Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn gravity_along_x_is_quarter_turn_about_y() {
        let c = cloud(vec![Vec3::x()]);
        let (aligned, t) = gravity_align(&c, &Vec3::x()).unwrap();
        assert!((aligned.points()[0] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let expected = exp_so3(&(Vec3::y() * FRAC_PI_2));
        assert!((t.rotation - expected).amax() < 1e-12);
    }

    #[test]
    fn gravity_pointing_up_uses_x_half_turn() {
        let r = gravity_rotation(&Vec3::z()).unwrap();
        assert!((r * Vec3::z() + Vec3::z()).norm() < 1e-12);
        assert!((r * Vec3::x() - Vec3::x()).norm() < 1e-12);
        assert!(gravity_rotation(&Vec3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn plane_normals() {
        let pts: Vec<_> = (0..100).map(|k| Vec3::new((k % 10) as f64 * 0.3, (k / 10) as f64 * 0.2, 0.0)).collect();
        let est = estimate_normals(&pts, Frame::Sensor, 10).unwrap();
        assert!(est.degenerate.is_empty());
        for n in est.cloud.normals() {
            assert!((n.z.abs() - 1.0).abs() < 1e-6, "{n:?}");
        }
    }

    #[test]
    fn normals_face_origin() {
        let pts: Vec<_> = (0..60).map(|k| Vec3::new((k % 6) as f64 * 0.3, (k / 6) as f64 * 0.2, 2.0)).collect();
        let est = estimate_normals(&pts, Frame::Sensor, 8).unwrap();
        assert!(est.cloud.normals().iter().all(|n| (n.z + 1.0).abs() < 1e-9));
    }

    #[test]
    fn collinear_points_flagged() {
        let pts: Vec<_> = (0..4).map(|k| Vec3::new(k as f64, 2.0 * k as f64, 0.5)).collect();
        let est = estimate_normals(&pts, Frame::Sensor, 3).unwrap();
        assert_eq!(est.degenerate, vec![0, 1, 2, 3]);
        assert!(est.cloud.is_empty());
    }

    #[test]
    fn normal_preconditions() {
        let pts = vec![Vec3::zeros(); 3];
        assert!(estimate_normals(&pts, Frame::Sensor, 3).is_err());
        assert!(estimate_normals(&vec![Vec3::zeros(); 10], Frame::Sensor, 2).is_err());
    }

    #[test]
    fn self_match() {
        let pts: Vec<_> = (0..50).map(|k| Vec3::new(k as f64 * 0.1, (k * k) as f64 * 0.01, 0.0)).collect();
        let c = cloud(pts);
        let corr = match_clouds(&c, &c, f64::INFINITY).unwrap();
        assert_eq!(corr.len(), 50);
        assert!(corr.pairs.iter().all(|&(i, j)| i == j));
        assert!(corr.distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn zero_radius_on_distinct_clouds() {
        let a = cloud(vec![Vec3::zeros()]);
        let b = cloud(vec![Vec3::x()]);
        assert!(matches!(match_clouds(&a, &b, 0.0), Err(Error::NoOverlap { .. })));
    }

    #[test]
    fn frame_mismatch_rejected() {
        let a = cloud(vec![Vec3::zeros()]);
        let b = PointCloud::new(vec![Vec3::zeros()], vec![Vec3::z()], Frame::Sensor).unwrap();
        assert!(matches!(match_clouds(&a, &b, 1.0), Err(Error::InvalidInput(_))));
    }
}
