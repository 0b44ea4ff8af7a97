#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use nalgebra::UnitQuaternion;
use pbba::control::ControlPoint;
use pbba::geometry::{relative_pose, Intrinsics, Pixel, Pose, Twist, Vec3};
use pbba::grid::{Grid, Image};
use pbba::radiance::{BrdfTable, EnvironmentMap, RadianceContext};
use pbba::solver::{build_problem, linearize_patch, patch_residuals, FrameInput, Problem, SolverConfig};
use pbba::surface::{DepthMap, NormalMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textured plane `z = PLANE_Z`, facing the cameras.
pub const PLANE_Z: f64 = 2.0;
/// Texture lattice spacing in meters.
const CELL: f64 = 0.04;

/// Bilinear value noise in `[0.2, 0.8]` over plane coordinates.
pub fn texture(x: f64, y: f64) -> f64 {
    let h = |i: i64, j: i64| (i.wrapping_mul(73_856_093) ^ j.wrapping_mul(19_349_663)).rem_euclid(1000) as f64 / 1000.0;
    let (gx, gy) = (x / CELL, y / CELL);
    let (i, j) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (gx - i as f64, gy - j as f64);
    let a = h(i, j) * (1.0 - fx) + h(i + 1, j) * fx;
    let b = h(i, j + 1) * (1.0 - fx) + h(i + 1, j + 1) * fx;
    0.2 + 0.6 * (a * (1.0 - fy) + b * fy)
}

pub fn intrinsics() -> Intrinsics {
    Intrinsics::from_fov(64, 48, 70.0)
}

/// Exact image, depth and normals of the plane seen from `pose`.
pub fn view(pose: &Pose, k: &Intrinsics) -> (Image, Image, Grid<Vec3>) {
    let inv = pose.rotation.inverse();
    let mut img = Image::filled(k.width, k.height, 0.0);
    let mut depth = Image::filled(k.width, k.height, 0.0);
    for y in 0..k.height {
        for x in 0..k.width {
            let dir = pose.rotation * k.ray(Pixel::new(x as f64, y as f64));
            let t = (PLANE_Z - pose.translation.z) / dir.z;
            let p = pose.translation + dir * t;
            img.set(x, y, texture(p.x, p.y) as f32);
            depth.set(x, y, t as f32);
        }
    }
    let normals = Grid::filled(k.width, k.height, inv * Vec3::new(0.0, 0.0, -1.0));
    (img, depth, normals)
}

/// Per-frame image shifts in whole pixels.
const SHIFTS: [(i32, i32); 8] = [(0, 0), (2, 0), (3, 1), (5, -1), (6, 2), (8, 0), (9, -2), (11, 1)];

/// Translations parallel to the plane that move its image by whole pixels,
/// so every view samples the others exactly at lattice points.
pub fn ground_truth(frames: usize) -> Vec<Pose> {
    let k = intrinsics();
    SHIFTS[..frames]
        .iter()
        .map(|(a, b)| {
            Pose::new(
                UnitQuaternion::identity(),
                Vec3::new(*a as f64 * PLANE_Z / k.fx, *b as f64 * PLANE_Z / k.fy, 0.0),
            )
        })
        .collect()
}

pub fn perturb(poses: &[Pose], rot: f64, trans: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                return *p;
            }
            let mut t = Twist::zeros();
            for j in 0..3 {
                t[j] = rng.random_range(-rot..rot);
                t[j + 3] = rng.random_range(-trans..trans);
            }
            p.compose(&Pose::exp(&t))
        })
        .collect()
}

pub fn small_brdf() -> Arc<BrdfTable> {
    static T: OnceLock<Arc<BrdfTable>> = OnceLock::new();
    T.get_or_init(|| Arc::new(BrdfTable::build(16, 16, 256))).clone()
}

/// One control with an environment brighter toward +y.
pub fn context() -> Arc<RadianceContext> {
    static C: OnceLock<Arc<RadianceContext>> = OnceLock::new();
    C.get_or_init(|| {
        let env = EnvironmentMap::from_fn(8, |d| {
            let v = 0.3 + 0.7 * d.y.max(0.0).powi(4);
            [v, v, v]
        })
        .unwrap();
        Arc::new(RadianceContext::new(
            vec![pbba::radiance::PrefilteredEnv::build(&env, 5, 64)],
            small_brdf(),
        ))
    })
    .clone()
}

pub fn controls() -> Vec<ControlPoint> {
    vec![ControlPoint {
        position: Vec3::new(0.0, 0.0, 1.5),
        envmap_id: 0,
    }]
}

/// Images rendered at `truth`, problem posed at `start`.
pub fn problem(truth: &[Pose], start: &[Pose], cfg: &SolverConfig) -> Problem {
    let k = intrinsics();
    let inputs = truth
        .iter()
        .zip(start)
        .enumerate()
        .map(|(i, (t, s))| {
            let (image, depth, normals) = view(t, &k);
            FrameInput {
                image,
                depth: DepthMap::new(depth, &k).unwrap(),
                roughness: Image::filled(k.width, k.height, 0.3),
                normals: Some(NormalMap::from_vectors(normals)),
                pose: *s,
                timestamp: i as f64 / 30.0,
            }
        })
        .collect();
    build_problem(inputs, k, context(), controls(), cfg).unwrap().0
}

pub fn small_config() -> SolverConfig {
    let mut cfg = SolverConfig::default();
    cfg.points.host_stride = 2;
    cfg.points.per_host = 120;
    cfg
}

pub fn max_pose_diff(a: &[Pose], b: &[Pose]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0f64, 0.0f64), |(t, r), (x, y)| {
        (
            t.max((x.translation - y.translation).norm()),
            r.max(x.rotation.angle_to(&y.rotation)),
        )
    })
}

/// Least-squares factor `s` minimizing `Σ |s·a_t − b_t|²` over translations.
pub fn translation_scale(a: &[Pose], b: &[Pose]) -> f64 {
    let (num, den) = a.iter().zip(b).fold((0.0, 0.0), |(n, d), (x, y)| {
        (n + x.translation.dot(&y.translation), d + x.translation.norm_squared())
    });
    num / den
}

/// `a` with every translation multiplied by `s`.
pub fn scaled(a: &[Pose], s: f64) -> Vec<Pose> {
    a.iter().map(|p| Pose::new(p.rotation, p.translation * s)).collect()
}

/// Central differences of the patch residuals for one configuration.
fn numeric_jacobian(
    host: &pbba::grid::Image,
    target: &pbba::grid::Image,
    px: Pixel,
    d: f64,
    hp: &Pose,
    tp: &Pose,
) -> (
    nalgebra::SMatrix<f64, 8, 6>,
    nalgebra::SMatrix<f64, 8, 6>,
    nalgebra::SVector<f64, 8>,
) {
    let k = intrinsics();
    let eps = 1e-6;
    let res = |h: &Pose, t: &Pose, d: f64| patch_residuals(host, target, px, d, &relative_pose(t, h), &k).unwrap();
    let mut jh = nalgebra::SMatrix::<f64, 8, 6>::zeros();
    let mut jt = nalgebra::SMatrix::<f64, 8, 6>::zeros();
    for c in 0..6 {
        let mut e = Twist::zeros();
        e[c] = eps;
        let plus = hp.compose(&Pose::exp(&e));
        let minus = hp.compose(&Pose::exp(&-e));
        jh.set_column(c, &((res(&plus, tp, d) - res(&minus, tp, d)) / (2.0 * eps)));
        let plus = tp.compose(&Pose::exp(&e));
        let minus = tp.compose(&Pose::exp(&-e));
        jt.set_column(c, &((res(hp, &plus, d) - res(hp, &minus, d)) / (2.0 * eps)));
    }
    let jd = (res(hp, tp, d + eps) - res(hp, tp, d - eps)) / (2.0 * eps);
    (jh, jt, jd)
}

/// Whether any pattern pixel warps within `margin` of a bilinear cell edge,
/// where the interpolant is not differentiable.
fn near_cell_edge(px: Pixel, d: f64, rel: &Pose, margin: f64) -> bool {
    let k = intrinsics();
    pbba::solver::PATTERN.iter().any(|(du, dv)| {
        let q = Pixel::new(px.u + *du as f64, px.v + *dv as f64);
        let w = pbba::geometry::warp(q, 1.0 / d, rel, &k).unwrap();
        let f = |x: f64| (x - x.round()).abs();
        f(w.pixel.u) < margin || f(w.pixel.v) < margin
    })
}

/// Largest relative deviation between analytic and central-difference
/// Jacobians over `count` random host/target/pixel/depth configurations.
pub fn jacobian_error(count: usize, seed: u64) -> f64 {
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < count {
        let hp = Pose::exp(&Twist::from_fn(|i, _| {
            rng.random_range(-0.05..0.05) * if i < 3 { 1.0 } else { 2.0 }
        }));
        let tp = hp.compose(&Pose::exp(&Twist::from_fn(|i, _| {
            rng.random_range(-0.04..0.04) * if i < 3 { 1.0 } else { 3.0 }
        })));
        let (host, _, _) = view(&hp, &k);
        let (target, _, _) = view(&tp, &k);
        let px = Pixel::new(rng.random_range(8..56) as f64, rng.random_range(8..40) as f64);
        let d = rng.random_range(0.3..0.8);
        let rel = relative_pose(&tp, &hp);
        let Ok(j) = linearize_patch(&host, &target, px, d, &hp, &tp, &k) else {
            continue;
        };
        if near_cell_edge(px, d, &rel, 1e-3) {
            continue;
        }
        let (jh, jt, jd) = numeric_jacobian(&host, &target, px, d, &hp, &tp);
        let rel_err = |a: f64, b: f64| a / b.max(1e-12);
        worst = worst
            .max(rel_err((j.d_host - jh).amax(), jh.amax()))
            .max(rel_err((j.d_target - jt).amax(), jt.amax()))
            .max(rel_err((j.d_inv_depth - jd).amax(), jd.amax()));
        checked += 1;
    }
    worst
}
