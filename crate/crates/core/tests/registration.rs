mod common;

use altimeter_icp::altimetry::AltitudeReading;
use altimeter_icp::pointcloud::{exp_so3, rot_z, Correspondences, Frame, PointCloud, RigidTransform};
use altimeter_icp::registration::{
    apply_tau, icp, keeps_gravity_vertical, point_to_plane_error, solve_tau, ConstraintMode, IcpConfig, IcpResult, Tau,
};
use altimeter_icp::{Error, Vec3};
use common::{cloud, floor_and_ceiling, nelder_mead, normal, reading_and_map, rng, room, walls_only};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

fn altitude(z: f64) -> AltitudeReading {
    AltitudeReading { timestamp: 0.0, delta_z: z, variance: 1e-4 }
}

fn identity_pairs(n: usize) -> Correspondences {
    Correspondences { pairs: (0..n).map(|i| (i, i)).collect(), distances: vec![0.0; n] }
}

fn no_trim() -> IcpConfig {
    IcpConfig { trim_ratio: 0.0, ..Default::default() }
}

fn pose(yaw: f64, x: f64, y: f64, z: f64) -> RigidTransform {
    RigidTransform::from_yaw(yaw, Vec3::new(x, y, z))
}

/// Random pairs with random unit normals on the reference side.
fn random_pairs(g: &mut ChaCha8Rng, k: usize) -> (PointCloud, PointCloud) {
    let mut reading = Vec::new();
    let mut reference = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..k {
        let p = Vec3::new(g.random_range(-5.0..5.0), g.random_range(-5.0..5.0), g.random_range(-2.0..2.0));
        let n = Vec3::new(normal(g), normal(g), normal(g)).normalize();
        reading.push(p);
        reference.push(p + Vec3::new(g.random_range(-0.2..0.2), g.random_range(-0.2..0.2), g.random_range(-0.2..0.2)));
        normals.push(n);
    }
    let nr = reading.len();
    (cloud(reading, vec![Vec3::z(); nr], Frame::Map), cloud(reference, normals, Frame::Map))
}

/// Least squares over the explicitly stacked design `[a_k^T]` with the
/// Tikhonov rows appended, solved by SVD.
fn stacked_solution(reading: &PointCloud, reference: &PointCloud, pairs: &[(usize, usize)], damping: f64) -> Vector3 {
    let k = pairs.len();
    let mut a = DMatrix::<f64>::zeros(k + 3, 3);
    let mut b = DVector::<f64>::zeros(k + 3);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        let p = reading.points()[i];
        let q = reference.points()[j];
        let n = reference.normals()[j];
        a[(row, 0)] = n.dot(&Vec3::z().cross(&p));
        a[(row, 1)] = n.x;
        a[(row, 2)] = n.y;
        b[row] = n.dot(&(q - p));
    }
    for d in 0..3 {
        a[(k + d, d)] = damping.sqrt();
    }
    let x = a.svd(true, true).solve(&b, 0.0).unwrap();
    Vector3::new(x[0], x[1], x[2])
}

type Vector3 = nalgebra::Vector3<f64>;

fn tau_vector(t: &Tau) -> Vector3 {
    Vector3::new(t.gamma, t.r_x, t.r_y)
}

/// Asserts the 3-DOF invariants: yaw-only rotation after leveling and z
/// pinned to the altitude.
fn assert_constrained(result: &IcpResult, gravity: &Vec3, z: f64) {
    assert!(keeps_gravity_vertical(&result.transform, gravity, 1e-9));
    assert_eq!(result.transform.translation.z, z);
}

#[test]
fn pure_yaw_is_recovered_by_iterating() {
    let mut g = rng(1);
    let (pts, normals) = walls_only(&mut g, 100);
    let truth = RigidTransform { rotation: rot_z(0.01), translation: Vec3::zeros() };
    let (reading, map) = reading_and_map(&pts, &normals, &truth);
    let r = icp(&reading, &map, &RigidTransform::identity(), Some(&altitude(0.0)), &-Vec3::z(), ConstraintMode::ThreeDof, &IcpConfig { rotation_tol: 1e-10, translation_tol: 1e-10, ..Default::default() }).unwrap();
    assert!((r.transform.yaw() - 0.01).abs() < 1e-6, "yaw {}", r.transform.yaw());
    assert!(r.transform.translation.x.abs() < 1e-6 && r.transform.translation.y.abs() < 1e-6);
    assert_constrained(&r, &-Vec3::z(), 0.0);
}

#[test]
fn room_offset_is_recovered() {
    let mut g = rng(2);
    let (pts, normals) = room(&mut g, 300);
    let truth = pose(0.05, 0.3, 0.2, 0.0);
    let (reading, map) = reading_and_map(&pts, &normals, &truth);
    let r = icp(&reading, &map, &RigidTransform::identity(), Some(&altitude(0.0)), &-Vec3::z(), ConstraintMode::ThreeDof, &IcpConfig::default()).unwrap();
    assert!(r.converged);
    assert!((r.transform.yaw() - 0.05).abs() < 1e-4);
    assert!((r.transform.translation - truth.translation).norm() < 1e-3);
    assert!(r.degenerate_directions.is_empty());
    assert_constrained(&r, &-Vec3::z(), 0.0);
}

#[test]
fn large_yaw_is_taken_in_clamped_steps() {
    let mut g = rng(3);
    let (pts, normals) = room(&mut g, 300);
    let truth = pose(0.3, 0.0, 0.0, 0.0);
    let (reading, map) = reading_and_map(&pts, &normals, &truth);
    let cfg = IcpConfig { max_dist: 3.0, ..Default::default() };
    let r = icp(&reading, &map, &RigidTransform::identity(), Some(&altitude(0.0)), &-Vec3::z(), ConstraintMode::ThreeDof, &cfg).unwrap();
    assert!(r.iterations >= 3, "0.3 rad needs at least three 0.1 rad steps, took {}", r.iterations);
    assert!((r.transform.yaw() - 0.3).abs() < 1e-4);
}

#[test]
fn walls_only_scene_cannot_correct_a_z_bias_without_altitude() {
    let mut g = rng(4);
    let (pts, normals) = walls_only(&mut g, 200);
    let truth = pose(0.02, 0.2, 0.1, 0.0);
    let (reading, map) = reading_and_map(&pts, &normals, &truth);
    let biased = pose(0.02, 0.2, 0.1, 0.5);
    let three = icp(&reading, &map, &biased, Some(&altitude(0.0)), &-Vec3::z(), ConstraintMode::ThreeDof, &IcpConfig::default()).unwrap();
    assert!(three.transform.translation.z.abs() < 0.01);
    assert_constrained(&three, &-Vec3::z(), 0.0);
    for mode in [ConstraintMode::SixDof, ConstraintMode::FourDof] {
        let r = icp(&reading, &map, &biased, None, &-Vec3::z(), mode, &IcpConfig::default()).unwrap();
        assert!((r.transform.translation.z - 0.5).abs() < 0.01, "{mode}: z = {}", r.transform.translation.z);
        assert!(r.degenerate_directions.iter().any(|d| d == "r_z"), "{mode}: {:?}", r.degenerate_directions);
        assert!((r.transform.translation.xy() - truth.translation.xy()).norm() < 1e-3);
    }
}

#[test]
fn vertical_normals_give_a_zero_step_with_flags() {
    let mut g = rng(5);
    let (pts, normals) = floor_and_ceiling(&mut g, 200);
    let truth = pose(0.02, 0.3, -0.2, 0.1);
    let (reading, map) = reading_and_map(&pts, &normals, &truth);
    let shifted = reading.transformed(&truth, Frame::Map);
    let corr = altimeter_icp::pointcloud::match_clouds(&shifted, &map, 1.0).unwrap();
    let sol = solve_tau(&shifted, &map, &corr, &IcpConfig::default());
    assert_eq!(sol.tau, Tau::default());
    assert_eq!(sol.degenerate, vec!["gamma", "r_x", "r_y"]);

    let prior = pose(0.0, 1.0, 2.0, 0.0);
    let r = icp(&reading, &map, &prior, Some(&altitude(0.1)), &-Vec3::z(), ConstraintMode::ThreeDof, &IcpConfig::default()).unwrap();
    assert!(r.final_error.is_finite());
    assert_eq!(r.transform.translation, Vec3::new(1.0, 2.0, 0.1));
    assert_eq!(r.degenerate_directions, vec!["gamma", "r_x", "r_y"]);
    assert_constrained(&r, &-Vec3::z(), 0.1);

    // The floor fixes z for the full solver, which cannot see x, y or yaw.
    let six = icp(&reading, &map, &prior, None, &-Vec3::z(), ConstraintMode::SixDof, &IcpConfig::default()).unwrap();
    assert!((six.transform.translation.z - 0.1).abs() < 1e-6);
    for d in ["gamma", "r_x", "r_y"] {
        assert!(six.degenerate_directions.iter().any(|x| x == d), "{:?}", six.degenerate_directions);
    }
}

#[test]
fn one_step_yaw_error_is_quadratic() {
    // The second-order term of a yaw step is absorbed by the translation
    // columns when all walls share a vertical line, and cancels for point
    // sets symmetric about the rotation axis. Parallel walls with one-sided
    // extents avoid both.
    let mut g = rng(6);
    let (mut pts, mut normals) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        pts.push(Vec3::new(g.random_range(1.0..7.0), -1.5, g.random_range(0.0..2.0)));
        normals.push(Vec3::y());
        pts.push(Vec3::new(g.random_range(0.0..5.0), 2.5, g.random_range(0.0..2.0)));
        normals.push(-Vec3::y());
        pts.push(Vec3::new(7.5, g.random_range(-1.5..2.5), g.random_range(0.0..2.0)));
        normals.push(-Vec3::x());
    }
    let err = |gamma: f64| {
        let rot = rot_z(gamma);
        let reading = cloud(pts.clone(), normals.clone(), Frame::Map);
        let reference = cloud(pts.iter().map(|p| rot * p).collect(), normals.iter().map(|n| rot * n).collect(), Frame::Map);
        let sol = solve_tau(&reading, &reference, &identity_pairs(pts.len()), &no_trim());
        (sol.tau.gamma - gamma).abs()
    };
    let e: Vec<f64> = [0.01, 0.02, 0.04].iter().map(|&a| err(a)).collect();
    for w in e.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio / 4.0 - 1.0).abs() < 0.3, "errors {e:?}, ratio {ratio}");
    }
}

#[test]
fn final_error_matches_a_global_search() {
    for seed in 0..10 {
        let mut g = rng(100 + seed);
        // Sparse points, at least 0.3 m apart, so nearest neighbours at the
        // optimum are the generating pairs.
        let (mut pts, mut normals) = (Vec::new(), Vec::new());
        let (cand, cand_n) = room(&mut g, 200);
        for (p, n) in cand.into_iter().zip(cand_n) {
            if pts.len() < 90 && pts.iter().all(|q: &Vec3| (q - p).norm() > 0.3) {
                pts.push(p);
                normals.push(n);
            }
        }
        let truth = pose(g.random_range(-0.05..0.05), g.random_range(-0.1..0.1), g.random_range(-0.1..0.1), 0.2);
        let (reading, _) = reading_and_map(&pts, &normals, &truth);
        let noisy: Vec<Vec3> = pts.iter().zip(&normals).map(|(p, n)| p + n * 0.01 * normal(&mut g)).collect();
        let map = cloud(noisy.clone(), normals.clone(), Frame::Map);

        let cfg = IcpConfig { trim_ratio: 0.0, rotation_tol: 1e-13, translation_tol: 1e-13, max_iterations: 200, ..Default::default() };
        let r = icp(&reading, &map, &RigidTransform::identity(), Some(&altitude(0.2)), &-Vec3::z(), ConstraintMode::ThreeDof, &cfg).unwrap();
        assert_constrained(&r, &-Vec3::z(), 0.2);

        let objective = |x: &[f64; 3]| {
            let t = pose(x[0], x[1], x[2], 0.2);
            reading
                .points()
                .iter()
                .zip(noisy.iter().zip(&normals))
                .map(|(p, (q, n))| n.dot(&(t.apply(p) - q)).powi(2))
                .sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for gamma in [-0.2, 0.0, 0.2] {
            for x in [-0.3, 0.3] {
                for y in [-0.3, 0.3] {
                    best = best.min(nelder_mead(objective, [gamma, x, y], 0.05, 1e-14).1);
                }
            }
        }
        assert!((r.final_error - best).abs() <= 1e-6 * best, "seed {seed}: icp {} vs search {best}", r.final_error);
    }
}

#[test]
fn identity_in_every_mode() {
    let mut g = rng(7);
    let (pts, normals) = room(&mut g, 200);
    let (reading, map) = reading_and_map(&pts, &normals, &RigidTransform::identity());
    for mode in ConstraintMode::ALL {
        let r = icp(&reading, &map, &RigidTransform::identity(), Some(&altitude(0.0)), &-Vec3::z(), mode, &IcpConfig::default()).unwrap();
        assert!(r.converged && r.iterations <= 2, "{mode}: {} iterations", r.iterations);
        assert!(r.final_error < 1e-20);
        assert!((r.transform.rotation - nalgebra::Matrix3::identity()).amax() < 1e-12);
        assert!(r.transform.translation.norm() < 1e-12);
    }
}

#[test]
fn configuration_errors() {
    let mut g = rng(8);
    let (pts, normals) = room(&mut g, 50);
    let (reading, map) = reading_and_map(&pts, &normals, &RigidTransform::identity());
    let id = RigidTransform::identity();
    let down = -Vec3::z();
    assert!(matches!(
        icp(&reading, &map, &id, None, &down, ConstraintMode::ThreeDof, &IcpConfig::default()),
        Err(Error::Config(_))
    ));
    assert!(icp(&reading, &reading, &id, Some(&altitude(0.0)), &down, ConstraintMode::ThreeDof, &IcpConfig::default()).is_err());
    let far = pose(0.0, 100.0, 0.0, 0.0);
    assert!(matches!(
        icp(&reading, &map, &far, Some(&altitude(0.0)), &down, ConstraintMode::ThreeDof, &IcpConfig::default()),
        Err(Error::NoOverlap { .. })
    ));
    let bad = IcpConfig { trim_ratio: 0.5, ..Default::default() };
    assert!(matches!(icp(&reading, &map, &id, Some(&altitude(0.0)), &down, ConstraintMode::ThreeDof, &bad), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn solver_matches_stacked_least_squares(seed in any::<u64>(), k in 10usize..200) {
        let mut g = rng(seed);
        let (reading, reference) = random_pairs(&mut g, k);
        let cfg = no_trim();
        let sol = solve_tau(&reading, &reference, &identity_pairs(k), &cfg);
        let oracle = stacked_solution(&reading, &reference, &identity_pairs(k).pairs, cfg.damping);
        let got = tau_vector(&sol.tau);
        prop_assert!((got - oracle).norm() <= 1e-9 * (1.0 + oracle.norm()), "{:?} vs {:?}", got, oracle);
        prop_assert!(sol.degenerate.is_empty());
    }

    #[test]
    fn trimmed_solver_matches_stacked_least_squares_on_kept_rows(seed in any::<u64>(), k in 20usize..200, ratio in 0.0..0.45f64) {
        let mut g = rng(seed);
        let (reading, reference) = random_pairs(&mut g, k);
        let cfg = IcpConfig { trim_ratio: ratio, ..Default::default() };
        let mut by_residual: Vec<(f64, usize)> = (0..k)
            .map(|i| (reference.normals()[i].dot(&(reference.points()[i] - reading.points()[i])).abs(), i))
            .collect();
        by_residual.sort_by(|a, b| a.0.total_cmp(&b.0));
        let keep = k - (ratio * k as f64).floor() as usize;
        let kept: Vec<(usize, usize)> = by_residual[..keep].iter().map(|&(_, i)| (i, i)).collect();
        let oracle = stacked_solution(&reading, &reference, &kept, cfg.damping);
        let got = tau_vector(&solve_tau(&reading, &reference, &identity_pairs(k), &cfg).tau);
        prop_assert!((got - oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
    }

    #[test]
    fn a_solved_step_never_increases_the_error(
        seed in any::<u64>(),
        gamma in -0.1..0.1f64,
        x in -0.3..0.3f64,
        y in -0.3..0.3f64,
    ) {
        let mut g = rng(seed);
        let (pts, normals) = room(&mut g, 60);
        let (reading, map) = reading_and_map(&pts, &normals, &pose(gamma, x, y, 0.0));
        let reading = cloud(reading.points().to_vec(), reading.normals().to_vec(), Frame::Map);
        let corr = identity_pairs(pts.len());
        let before = point_to_plane_error(&reading, &map, &corr);
        let sol = solve_tau(&reading, &map, &corr, &no_trim());
        prop_assert!(sol.tau.gamma.abs() <= 0.1 + 1e-3);
        let moved = reading.transformed(&apply_tau(&RigidTransform::identity(), &sol.tau), Frame::Map);
        let after = point_to_plane_error(&moved, &map, &corr);
        prop_assert!(after <= before + 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn three_dof_keeps_gravity_and_altitude(
        seed in any::<u64>(),
        gamma in -0.1..0.1f64,
        x in -0.3..0.3f64,
        y in -0.3..0.3f64,
        z in -10.0..10.0f64,
        tilt_x in -0.05..0.05f64,
        tilt_y in -0.05..0.05f64,
        prior_z in -10.0..10.0f64,
    ) {
        let mut g = rng(seed);
        let (pts, normals) = room(&mut g, 100);
        let tilt = exp_so3(&Vec3::new(tilt_x, tilt_y, 0.0));
        let level = pose(gamma, x, y, z);
        let truth = RigidTransform { rotation: level.rotation * tilt, translation: level.translation };
        let lifted: Vec<Vec3> = pts.iter().map(|p| p + Vec3::new(0.0, 0.0, z)).collect();
        let (reading, map) = reading_and_map(&lifted, &normals, &truth);
        let gravity = tilt.transpose() * -Vec3::z();
        let prior = pose(0.0, 0.0, 0.0, prior_z);
        let r = icp(&reading, &map, &prior, Some(&altitude(z)), &gravity, ConstraintMode::ThreeDof, &IcpConfig::default()).unwrap();
        prop_assert!(keeps_gravity_vertical(&r.transform, &gravity, 1e-9));
        prop_assert_eq!(r.transform.translation.z, z);
        prop_assert!(r.iterations <= IcpConfig::default().max_iterations);
        if tilt_x == 0.0 && tilt_y == 0.0 {
            prop_assert!((r.transform.rotation * Vec3::z() - Vec3::z()).amax() <= 1e-9);
        }
    }
}
