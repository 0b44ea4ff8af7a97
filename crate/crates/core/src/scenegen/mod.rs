//! Synthetic rooms of textured planes under spherical-Gaussian lighting,
//! rendered by Monte Carlo with exact depth, normal and roughness channels.
//!
//! Scene files (`key = value`):
//!
//! ```text
//! seed = 7
//! plane.0.corners = x0 y0 z0  x1 y1 z1  x2 y2 z2  x3 y3 z3   # in order around the quad
//! plane.0.albedo = constant | checker | noise
//! plane.0.color = r g b            # base albedo, or one gray value
//! plane.0.color2 = r g b           # second checker / noise color
//! plane.0.cell = 0.1               # checker or noise cell size, meters
//! plane.0.softness = 0.25          # checker edge blur, fraction of a cell
//! plane.0.noise_seed = 3
//! plane.0.roughness = 0.1          # at corner 0
//! plane.0.roughness_end = 0.6      # at corner 2, linear in between
//! light.ambient = r g b
//! light.lobe.0.axis = x y z
//! light.lobe.0.sharpness = 40
//! light.lobe.0.amplitude = r g b
//! render.spp = 256
//! render.env_spp = 64
//! render.env_height = 32
//! render.noise = 0.00392
//! render.exposure_mean = 0.35
//! ```
//!
//! Trajectory files:
//!
//! ```text
//! frames = 20
//! fps = 30
//! orbit.center = x y z     # or waypoint.N.position / waypoint.N.look_at
//! orbit.radius = 1.2
//! orbit.height = 0.3
//! orbit.start = 0          # degrees
//! orbit.arc = 30           # degrees swept over the sequence
//! camera.width = 160
//! camera.height = 120
//! camera.hfov = 60
//! perturb.rot_deg = 0.5
//! perturb.trans = 0.02
//! perturb.seed = 1
//! controls.k = 16
//! controls.m = 10
//! ```
//!
//! World +y is up. Cameras look along +z with +y pointing down in the image.

mod render;
pub mod spec;

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use thiserror::Error;

pub use render::{finish_image, texture_color, FrameRender, Tracer, MIN_PLANE_DISTANCE};
pub use spec::{LightSpec, Path3, PlaneSpec, RenderSettings, Roughness, SceneSpec, SgLobe, Texture, TrajectorySpec};

use crate::control::{make_control_points, slic_on_normals, ControlError};
use crate::dataset::{Dataset, DatasetError, FrameData};
use crate::geometry::{Pose, Vec3};
use crate::kv::KvError;
use crate::surface::{DepthMap, NormalMap};
use crate::trajectory::Trajectory;

/// Samples per pixel of the preview render used to set the exposure.
pub const EXPOSURE_SPP: usize = 16;
/// Distance a control position is pulled toward the first camera, off its surface.
pub const CONTROL_OFFSET: f64 = 0.01;
/// Depth behind a plane from which a control is still lifted back in front of it.
pub const CONTROL_REACH: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("position lies {distance} m from plane {plane}")]
    DegeneratePosition { plane: usize, distance: f64 },
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// World-from-camera pose at `eye` looking toward `target`, image +y down.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let z = (target - eye).normalize();
    let mut up = Vec3::y();
    if z.cross(&up).norm() < 1e-6 {
        up = Vec3::z();
    }
    let y = -(up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Pose::new(UnitQuaternion::from_rotation_matrix(&r), *eye)
}

/// Ground-truth camera trajectory with timestamps `i / fps`.
pub fn camera_trajectory(spec: &TrajectorySpec) -> Trajectory {
    let n = spec.frames;
    let mut traj = Trajectory::new();
    for i in 0..n {
        let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let pose = match &spec.path {
            Path3::Orbit {
                center,
                radius,
                height,
                start_deg,
                arc_deg,
            } => {
                let phi = (start_deg + arc_deg * s).to_radians();
                let eye = center + Vec3::new(radius * phi.sin(), *height, radius * phi.cos());
                look_at(&eye, center)
            }
            Path3::Waypoints(w) => {
                let f = s * (w.len() - 1) as f64;
                let a = (f.floor() as usize).min(w.len() - 1);
                let b = (a + 1).min(w.len() - 1);
                let t = f - a as f64;
                let eye = w[a].0.lerp(&w[b].0, t);
                let target = w[a].1.lerp(&w[b].1, t);
                look_at(&eye, &target)
            }
        };
        traj.push(i as f64 / spec.fps, pose)
            .expect("timestamps increase with positive fps");
    }
    traj
}

/// Composes every pose after the first with a random rigid motion on the
/// right: a rotation about a uniform axis by an angle drawn from
/// `N(0, sigma_rot_deg)` and a translation drawn per axis from `N(0, sigma_t)`.
pub fn perturb_trajectory(gt: &Trajectory, sigma_rot_deg: f64, sigma_t: f64, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = Normal::new(0.0, sigma_rot_deg.to_radians()).expect("sigma >= 0");
    let trans = Normal::new(0.0, sigma_t).expect("sigma >= 0");
    let mut out = gt.clone();
    for i in 1..gt.len() {
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rot.sample(&mut rng);
        let t = Vec3::from_fn(|_, _| trans.sample(&mut rng));
        let delta = Pose::new(
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle),
            t,
        );
        out.set_pose(i, gt.pose(i).compose(&delta));
    }
    out
}

/// Light scale that brings the mean pre-noise luminance of the first frame
/// to `scene.render.exposure_mean`. Returns 1 when that frame is black.
pub fn exposure_scale(scene: &SceneSpec, first: &Pose, traj: &TrajectorySpec) -> f64 {
    let preview = Tracer::new(scene).render(first, &traj.intrinsics, EXPOSURE_SPP, scene.seed, 0);
    let mean = preview.radiance.mean();
    if mean > 0.0 {
        scene.render.exposure_mean / mean
    } else {
        1.0
    }
}

/// Summary of a generated sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateSummary {
    pub frames: usize,
    pub controls: usize,
    pub dropped_clusters: usize,
    pub exposure_scale: f64,
}

/// Renders a full sequence in memory: frames, ground-truth and perturbed
/// trajectories, control points from the first frame's ground-truth normals,
/// and an environment map at every control.
pub fn render_dataset(scene: &SceneSpec, traj: &TrajectorySpec) -> Result<(Dataset, GenerateSummary), SceneError> {
    scene.validate()?;
    traj.validate()?;
    let k = traj.intrinsics;
    let gt = camera_trajectory(traj);
    let scale = exposure_scale(scene, gt.pose(0), traj);
    let tracer = Tracer::with_light(scene, scene.light.scaled(scale));

    let mut frames = Vec::with_capacity(gt.len());
    let mut first_normals = None;
    for (i, pose) in gt.poses().enumerate() {
        let r = tracer.render(pose, &k, scene.render.spp, scene.seed, i as u64);
        let image = finish_image(&r.radiance, scene.render.noise, scene.seed, i as u64);
        if i == 0 {
            first_normals = Some(NormalMap::from_vectors(r.normals.clone()));
        }
        frames.push(FrameData {
            image,
            depth: r.depth,
            roughness: r.roughness,
            normals: Some(r.normals),
        });
    }

    let normals = first_normals.expect("at least two frames");
    let seg = slic_on_normals(&normals, traj.controls_k, traj.controls_m)?;
    let depth = DepthMap::new(frames[0].depth.clone(), &k).map_err(|e| SceneError::Invalid(e.to_string()))?;
    let eye = gt.pose(0).translation;
    let (mut controls, dropped) = make_control_points(&seg, &depth, gt.pose(0), &k)?;
    let mut envmaps = Vec::with_capacity(controls.len());
    for c in &mut controls {
        c.position += (eye - c.position).normalize() * CONTROL_OFFSET;
        c.position = tracer.clear_of_planes(&c.position, &eye, CONTROL_OFFSET, CONTROL_REACH);
        let env_seed = scene.seed.wrapping_add(1 + c.envmap_id as u64);
        envmaps.push(tracer.environment(&c.position, scene.render.env_height, scene.render.env_spp, env_seed)?);
    }

    let initial = perturb_trajectory(&gt, traj.perturb_rot_deg, traj.perturb_trans, traj.perturb_seed);
    let summary = GenerateSummary {
        frames: frames.len(),
        controls: controls.len(),
        dropped_clusters: dropped,
        exposure_scale: scale,
    };
    let dataset = Dataset {
        intrinsics: k,
        groundtruth: gt,
        initial,
        frames,
        controls,
        envmaps,
    };
    Ok((dataset, summary))
}

/// [`render_dataset`] followed by writing the layout under `out`.
pub fn generate_dataset(scene: &SceneSpec, traj: &TrajectorySpec, out: &Path) -> Result<GenerateSummary, SceneError> {
    let (dataset, summary) = render_dataset(scene, traj)?;
    dataset.write(out)?;
    Ok(summary)
}
