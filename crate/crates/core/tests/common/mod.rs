//! Scene builders and oracles shared by the integration tests.
#![allow(dead_code)]

use altimeter_icp::barometry::{CalibrationModel, Pattern, PressureSample};
use altimeter_icp::pointcloud::{Frame, PointCloud, RigidTransform};
use altimeter_icp::Vec3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample(timestamp: f64, p_raw: f64, t: f64) -> PressureSample {
    PressureSample { timestamp, p_raw, t, sensor_id: "dut".into() }
}

/// Random coefficients for `pattern` where every free term contributes
/// roughly 100 Pa at 100 kPa and 30 degrees C, on top of `p_cal ~ p_raw`.
pub fn random_generator(pattern: Pattern, rng: &mut ChaCha8Rng) -> CalibrationModel {
    let mut c = [[0.0; 4]; 4];
    for (i, j) in pattern.free_terms() {
        let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
        let k: f64 = rng.random_range(0.5..1.5);
        c[i][j] = sign * k * 100.0 / (1e5f64.powi(i as i32) * 30f64.powi(j as i32));
    }
    c[1][0] += 1.0;
    CalibrationModel::new(pattern, c, 0.0).unwrap()
}

/// A 25 x 20 grid over the sensor operating range, 30-120 kPa and
/// -40-85 degrees C, labelled with `model`'s output.
pub fn operating_grid(model: &CalibrationModel) -> Vec<(PressureSample, f64)> {
    let mut out = Vec::new();
    for a in 0..25 {
        for b in 0..20 {
            let p = 30_000.0 + a as f64 * 90_000.0 / 24.0;
            let t = -40.0 + b as f64 * 125.0 / 19.0;
            out.push((sample((a * 20 + b) as f64, p, t), model.apply(p, t).unwrap()));
        }
    }
    out
}

/// Largest `|fitted - truth| / |truth|` over the free coefficients.
pub fn worst_relative_error(fitted: &CalibrationModel, truth: &CalibrationModel) -> f64 {
    truth
        .pattern()
        .free_terms()
        .into_iter()
        .map(|(i, j)| ((fitted.coeff(i, j) - truth.coeff(i, j)) / truth.coeff(i, j)).abs())
        .fold(0.0, f64::max)
}

pub fn cloud(points: Vec<Vec3>, normals: Vec<Vec3>, frame: Frame) -> PointCloud {
    PointCloud::new(points, normals, frame).unwrap()
}

/// Points on a floor (z = 0), a wall at x = 4 and a wall at y = 3, all
/// seen from a sensor near (1, 0.5, 1). Off-center so rotations about the
/// origin couple yaw and translation.
pub fn room(rng: &mut ChaCha8Rng, per_surface: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..per_surface {
        pts.push(Vec3::new(rng.random_range(-3.0..4.0), rng.random_range(-2.0..3.0), 0.0));
        normals.push(Vec3::z());
        pts.push(Vec3::new(4.0, rng.random_range(-2.0..3.0), rng.random_range(0.0..2.5)));
        normals.push(-Vec3::x());
        pts.push(Vec3::new(rng.random_range(-3.0..4.0), 3.0, rng.random_range(0.0..2.5)));
        normals.push(-Vec3::y());
    }
    (pts, normals)
}

/// Two parallel walls at y = -1.5 and y = 1.5 plus two end walls at
/// x = -6 and x = 6, no floor or ceiling: z is unobservable.
pub fn walls_only(rng: &mut ChaCha8Rng, per_surface: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..per_surface {
        for (y, n) in [(-1.5, Vec3::y()), (1.5, -Vec3::y())] {
            pts.push(Vec3::new(rng.random_range(-6.0..6.0), y, rng.random_range(-1.0..1.5)));
            normals.push(n);
        }
        for (x, n) in [(-6.0, Vec3::x()), (6.0, -Vec3::x())] {
            pts.push(Vec3::new(x, rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.5)));
            normals.push(n);
        }
    }
    (pts, normals)
}

/// Floor at z = -0.5 and ceiling at z = 2, nothing else.
pub fn floor_and_ceiling(rng: &mut ChaCha8Rng, per_surface: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut pts = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..per_surface {
        pts.push(Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-1.5..1.5), -0.5));
        normals.push(Vec3::z());
        pts.push(Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-1.5..1.5), 2.0));
        normals.push(-Vec3::z());
    }
    (pts, normals)
}

/// Map cloud and a sensor-frame reading of the same points, where
/// `truth` maps the reading into the map.
pub fn reading_and_map(points: &[Vec3], normals: &[Vec3], truth: &RigidTransform) -> (PointCloud, PointCloud) {
    let map = cloud(points.to_vec(), normals.to_vec(), Frame::Map);
    let inv = truth.inverse();
    let reading = cloud(
        points.iter().map(|p| inv.apply(p)).collect(),
        normals.iter().map(|n| inv.rotation * n).collect(),
        Frame::Sensor,
    );
    (reading, map)
}

/// Nelder-Mead simplex minimization, restarted from the best vertex until
/// a restart no longer improves the value.
pub fn nelder_mead<const N: usize>(f: impl Fn(&[f64; N]) -> f64, start: [f64; N], step: f64, tol: f64) -> ([f64; N], f64) {
    let mut best = (start, f(&start));
    loop {
        let found = simplex(&f, best.0, step, tol);
        if found.1 >= best.1 - tol * best.1.abs().max(1e-300) {
            return if found.1 < best.1 { found } else { best };
        }
        best = found;
    }
}

fn simplex<const N: usize>(f: &impl Fn(&[f64; N]) -> f64, start: [f64; N], step: f64, tol: f64) -> ([f64; N], f64) {
    let mut verts: Vec<([f64; N], f64)> = vec![(start, f(&start))];
    for k in 0..N {
        let mut x = start;
        x[k] += step;
        verts.push((x, f(&x)));
    }
    for _ in 0..20_000 {
        verts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = verts[N].1 - verts[0].1;
        if spread <= tol * verts[0].1.abs().max(1e-300) {
            break;
        }
        let mut centroid = [0.0; N];
        for v in &verts[..N] {
            for k in 0..N {
                centroid[k] += v.0[k] / N as f64;
            }
        }
        let along = |s: f64| {
            let mut x = [0.0; N];
            for k in 0..N {
                x[k] = centroid[k] + s * (verts[N].0[k] - centroid[k]);
            }
            (x, f(&x))
        };
        let reflected = along(-1.0);
        if reflected.1 < verts[0].1 {
            let expanded = along(-2.0);
            verts[N] = if expanded.1 < reflected.1 { expanded } else { reflected };
        } else if reflected.1 < verts[N - 1].1 {
            verts[N] = reflected;
        } else {
            let contracted = if reflected.1 < verts[N].1 { along(-0.5) } else { along(0.5) };
            if contracted.1 < verts[N].1.min(reflected.1) {
                verts[N] = contracted;
            } else {
                let best = verts[0].0;
                for v in verts.iter_mut().skip(1) {
                    for k in 0..N {
                        v.0[k] = best[k] + 0.5 * (v.0[k] - best[k]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    verts.sort_by(|a, b| a.1.total_cmp(&b.1));
    verts[0]
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}
