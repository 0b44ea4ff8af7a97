use std::sync::Arc;

use nalgebra::{Matrix2x3, SMatrix, SVector};

use crate::control::{nearest_control, ControlPoint};
use crate::geometry::{
    backproject, bilinear, project, relative_pose, skew, view_directions, GeometryError, Intrinsics, Pixel, Pose, Vec2,
    Vec3, MIN_WARP_DEPTH,
};
use crate::grid::Image;
use crate::radiance::{eval_radiance, RadianceContext, RadianceError};
use crate::surface::{estimate_normal_map, DepthMap, NormalMap, NormalParams};

use super::config::SolverConfig;
use super::select::select_pixels;
use super::weights::pb_weight;
use super::SolverError;

/// Residual pattern around a point: a diamond of 8 pixels.
pub const PATTERN: [(i32, i32); 8] = [(0, -2), (-1, -1), (1, -1), (-2, 0), (0, 0), (2, 0), (-1, 1), (0, 2)];
pub const PATTERN_LEN: usize = PATTERN.len();

pub type Residuals = SVector<f64, PATTERN_LEN>;
pub type PoseJacobian = SMatrix<f64, PATTERN_LEN, 6>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub host: usize,
    pub pixel: Pixel,
    pub inv_depth: f64,
    /// Unit normal in the host camera frame.
    pub normal: Vec3,
    pub roughness: f64,
    pub control_idx: usize,
    /// Target frames observing the point.
    pub obs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FrameState {
    pub id: usize,
    pub image: Image,
    pub depth: DepthMap,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub frames: Vec<FrameState>,
    pub points: Vec<ScenePoint>,
    pub intrinsics: Intrinsics,
    pub radiance: Arc<RadianceContext>,
    pub controls: Vec<ControlPoint>,
}

/// Residuals of one observation with derivatives for right-multiplied twist
/// updates `T ← T·exp(ξ)` of host and target poses, and for inverse depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationJacobian {
    pub residuals: Residuals,
    pub d_host: PoseJacobian,
    pub d_target: PoseJacobian,
    pub d_inv_depth: Residuals,
}

fn pattern_pixel(p: Pixel, k: usize) -> Pixel {
    Pixel::new(p.u + PATTERN[k].0 as f64, p.v + PATTERN[k].1 as f64)
}

fn host_intensity(image: &Image, p: Pixel) -> Result<f64, GeometryError> {
    let (x, y) = (p.u.round(), p.v.round());
    if x < 0.0 || y < 0.0 || x >= image.width() as f64 || y >= image.height() as f64 {
        return Err(GeometryError::OutOfBounds { u: p.u, v: p.v });
    }
    Ok(*image.get(x as usize, y as usize) as f64)
}

/// Residuals `I_host(p+o) − I_target(warp(p+o))` over the pattern, with one
/// shared inverse depth.
pub fn patch_residuals(
    host_image: &Image,
    target_image: &Image,
    pixel: Pixel,
    inv_depth: f64,
    rel: &Pose,
    k: &Intrinsics,
) -> Result<Residuals, GeometryError> {
    if !(inv_depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(1.0 / inv_depth));
    }
    let mut r = Residuals::zeros();
    for i in 0..PATTERN_LEN {
        let q = pattern_pixel(pixel, i);
        let ph = backproject(q, 1.0 / inv_depth, k)?;
        let pt = rel.transform_point(&ph);
        if pt.z <= MIN_WARP_DEPTH {
            return Err(GeometryError::BehindCamera(pt.z));
        }
        let (it, _) = bilinear(target_image, project(&pt, k))?;
        r[i] = host_intensity(host_image, q)? - it;
    }
    Ok(r)
}

/// Residuals and analytic Jacobians of one observation.
pub fn linearize_patch(
    host_image: &Image,
    target_image: &Image,
    pixel: Pixel,
    inv_depth: f64,
    host_pose: &Pose,
    target_pose: &Pose,
    k: &Intrinsics,
) -> Result<ObservationJacobian, GeometryError> {
    if !(inv_depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(1.0 / inv_depth));
    }
    let rel = relative_pose(target_pose, host_pose);
    let r_th = rel.rotation_matrix();
    let mut out = ObservationJacobian {
        residuals: Residuals::zeros(),
        d_host: PoseJacobian::zeros(),
        d_target: PoseJacobian::zeros(),
        d_inv_depth: Residuals::zeros(),
    };
    for i in 0..PATTERN_LEN {
        let q = pattern_pixel(pixel, i);
        let ph = backproject(q, 1.0 / inv_depth, k)?;
        let pt = r_th * ph + rel.translation;
        if pt.z <= MIN_WARP_DEPTH {
            return Err(GeometryError::BehindCamera(pt.z));
        }
        let (it, grad) = bilinear(target_image, project(&pt, k))?;
        out.residuals[i] = host_intensity(host_image, q)? - it;

        let iz = 1.0 / pt.z;
        let d_proj = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * pt.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * pt.y * iz * iz,
        );
        // r = I_h − I_t(π(P_t)) ⇒ dr/dP_t = −∇I_t · dπ/dP_t
        let g: Vec2 = grad;
        let dr_dp = -(g.transpose() * d_proj);
        let host_rot = -r_th * skew(&ph);
        let target_rot = skew(&pt);
        for c in 0..3 {
            out.d_host[(i, c)] = (dr_dp * host_rot.column(c))[0];
            out.d_host[(i, 3 + c)] = (dr_dp * r_th.column(c))[0];
            out.d_target[(i, c)] = (dr_dp * target_rot.column(c))[0];
            out.d_target[(i, 3 + c)] = -dr_dp[c];
        }
        out.d_inv_depth[i] = (dr_dp * (-r_th * ph / inv_depth))[0];
    }
    Ok(out)
}

impl Problem {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn inv_depths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.inv_depth).collect()
    }

    pub fn observation_count(&self) -> usize {
        self.points.iter().map(|p| p.obs.len()).sum()
    }

    /// Raw patch residuals of point `point` observed in frame `target`.
    pub fn residual(&self, point: usize, target: usize) -> Result<Residuals, GeometryError> {
        let p = &self.points[point];
        let host = &self.frames[p.host];
        let tgt = &self.frames[target];
        let rel = relative_pose(&tgt.pose, &host.pose);
        patch_residuals(&host.image, &tgt.image, p.pixel, p.inv_depth, &rel, &self.intrinsics)
    }

    pub fn linearize(&self, point: usize, target: usize) -> Result<ObservationJacobian, GeometryError> {
        let p = &self.points[point];
        let host = &self.frames[p.host];
        let tgt = &self.frames[target];
        linearize_patch(
            &host.image,
            &tgt.image,
            p.pixel,
            p.inv_depth,
            &host.pose,
            &tgt.pose,
            &self.intrinsics,
        )
    }

    /// Radiance-consistency weight of one observation at the current state.
    pub fn point_weight(&self, point: usize, target: usize, theta: f64) -> Result<f64, SolverError> {
        let p = &self.points[point];
        point_weight(
            p,
            &self.frames[p.host].pose,
            &self.frames[target].pose,
            p.inv_depth,
            &self.intrinsics,
            &self.radiance,
            theta,
        )
    }
}

/// Radiance reflected toward the host and target cameras, compared through
/// [`pb_weight`]. Directions are rotated into the world frame of the
/// environment maps. Back-facing views give weight one.
pub fn point_weight(
    point: &ScenePoint,
    host_pose: &Pose,
    target_pose: &Pose,
    inv_depth: f64,
    k: &Intrinsics,
    ctx: &RadianceContext,
    theta: f64,
) -> Result<f64, SolverError> {
    let rel = relative_pose(target_pose, host_pose);
    let (beta, beta_other) = view_directions(point.pixel, 1.0 / inv_depth, &rel, k)?;
    let rot = host_pose.rotation;
    let n = rot * point.normal;
    let r = eval_radiance(ctx, point.control_idx, &n, &(rot * beta), point.roughness);
    let r_other = eval_radiance(ctx, point.control_idx, &n, &(rot * beta_other), point.roughness);
    match (r, r_other) {
        (Ok(a), Ok(b)) => Ok(pb_weight(a, b, theta)),
        (Err(RadianceError::BackFacing(_)), _) | (_, Err(RadianceError::BackFacing(_))) => Ok(1.0),
        (Err(e), _) | (_, Err(e)) => Err(e.into()),
    }
}

/// Everything known about one frame when a problem is assembled.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub image: Image,
    pub depth: DepthMap,
    pub roughness: Image,
    pub normals: Option<NormalMap>,
    pub pose: Pose,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub selected: usize,
    pub without_depth: usize,
    pub without_normal: usize,
    pub unobserved: usize,
    pub observations: usize,
}

/// Whether frame `target` sees the surface point hosted at `pixel`: the whole
/// pattern warps inside the image, the surface faces the target camera, and
/// the target depth map agrees with the warped depth.
fn sees(
    pixel: Pixel,
    depth: f64,
    normal: &Vec3,
    rel: &Pose,
    target_depth: &DepthMap,
    k: &Intrinsics,
    tolerance: f64,
) -> bool {
    let Ok(ph) = backproject(pixel, depth, k) else {
        return false;
    };
    let pt = rel.transform_point(&ph);
    if pt.z <= MIN_WARP_DEPTH {
        return false;
    }
    let to_target = -(ph + rel.rotation.inverse() * rel.translation);
    if normal.dot(&to_target) <= 0.0 {
        return false;
    }
    for i in 0..PATTERN_LEN {
        let q = pattern_pixel(pixel, i);
        let Ok(qh) = backproject(q, depth, k) else { return false };
        let qt = rel.transform_point(&qh);
        if qt.z <= MIN_WARP_DEPTH || !k.in_bounds(project(&qt, k), 1.0) {
            return false;
        }
    }
    let c = project(&pt, k);
    let (x, y) = (c.u.round() as usize, c.v.round() as usize);
    match target_depth.depth(x, y) {
        Some(d) => (d - pt.z).abs() <= tolerance * pt.z,
        None => false,
    }
}

/// Selects points on every host frame, binds their normal, roughness and
/// control point from the host's maps, and lists the frames that see them at
/// the given poses.
pub fn build_problem(
    inputs: Vec<FrameInput>,
    k: Intrinsics,
    radiance: Arc<RadianceContext>,
    controls: Vec<ControlPoint>,
    cfg: &SolverConfig,
) -> Result<(Problem, BuildStats), SolverError> {
    if inputs.len() < 2 {
        return Err(SolverError::TooFewFrames(inputs.len()));
    }
    if controls.is_empty() || controls.len() > radiance.len() {
        return Err(SolverError::InvalidProblem(format!(
            "{} controls for {} environment maps",
            controls.len(),
            radiance.len()
        )));
    }
    let mut stats = BuildStats::default();
    let mut points = Vec::new();
    let params = NormalParams::default();
    for (h, input) in inputs.iter().enumerate() {
        if h % cfg.points.host_stride != 0 {
            continue;
        }
        let estimated;
        let normals = match &input.normals {
            Some(n) => n,
            None => {
                estimated = estimate_normal_map(&input.depth, &k, &params);
                &estimated
            }
        };
        let selected = select_pixels(&input.image, cfg.points.per_host);
        stats.selected += selected.len();
        for px in selected {
            let (x, y) = (px.u as usize, px.v as usize);
            let Some(depth) = input.depth.depth(x, y) else {
                stats.without_depth += 1;
                continue;
            };
            let Some(normal) = normals.get(x, y) else {
                stats.without_normal += 1;
                continue;
            };
            let obs: Vec<usize> = inputs
                .iter()
                .enumerate()
                .filter(|&(t, other)| {
                    t != h
                        && sees(
                            px,
                            depth,
                            &normal,
                            &relative_pose(&other.pose, &input.pose),
                            &other.depth,
                            &k,
                            cfg.points.occlusion_tolerance,
                        )
                })
                .map(|(t, _)| t)
                .collect();
            if obs.is_empty() {
                stats.unobserved += 1;
                continue;
            }
            let world = input.pose.transform_point(&backproject(px, depth, &k)?);
            stats.observations += obs.len();
            points.push(ScenePoint {
                host: h,
                pixel: px,
                inv_depth: 1.0 / depth,
                normal,
                roughness: (*input.roughness.get(x, y) as f64).clamp(0.0, 1.0),
                control_idx: nearest_control(&world, &controls)?,
                obs,
            });
        }
    }
    let frames = inputs
        .into_iter()
        .enumerate()
        .map(|(id, f)| FrameState {
            id,
            image: f.image,
            depth: f.depth,
            pose: f.pose,
            timestamp: f.timestamp,
        })
        .collect();
    Ok((
        Problem {
            frames,
            points,
            intrinsics: k,
            radiance,
            controls,
        },
        stats,
    ))
}
