//! Rigid poses, the pinhole camera, pixel warping and light-path directions.
//!
//! Poses are stored world-from-camera. The relative pose used to warp a pixel
//! from a host frame into a target frame is `target⁻¹ ∘ host`
//! (target-from-host), see [`relative_pose`].

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::grid::Image;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
/// Twist ordered `[ω_x, ω_y, ω_z, v_x, v_y, v_z]` (rotation first).
pub type Twist = Vector6<f64>;

/// Warped points closer than this to the target image plane are rejected.
pub const MIN_WARP_DEPTH: f64 = 1e-4;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("pixel ({u}, {v}) is outside the image")]
    OutOfBounds { u: f64, v: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Rigid transform stored as a unit quaternion and a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from a scalar-last quaternion, renormalizing it.
    pub fn from_xyzw(translation: Vec3, q: [f64; 4]) -> Self {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        Self::new(UnitQuaternion::from_quaternion(quat), translation)
    }

    /// Scalar-last quaternion `[qx, qy, qz, qw]`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = renormalize(self.rotation * other.rotation);
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// SE(3) exponential of a twist.
    pub fn exp(twist: &Twist) -> Pose {
        let omega = Vec3::new(twist[0], twist[1], twist[2]);
        let v = Vec3::new(twist[3], twist[4], twist[5]);
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        Pose {
            rotation,
            translation: left_jacobian(&omega) * v,
        }
    }

    /// SE(3) logarithm; inverse of [`Pose::exp`] for rotation angles below π.
    pub fn log(&self) -> Twist {
        let omega = self.rotation.scaled_axis();
        let v = left_jacobian_inverse(&omega) * self.translation;
        Twist::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(q.into_inner())
}

pub fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn left_jacobian(omega: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + w * a + w * w * b
}

fn left_jacobian_inverse(omega: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

/// `target⁻¹ ∘ host` for world-from-camera poses.
pub fn relative_pose(target: &Pose, host: &Pose) -> Pose {
    target.inverse().compose(host)
}

/// Continuous pixel coordinates. Integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

impl std::ops::Add<Vec2> for Pixel {
    type Output = Pixel;
    fn add(self, rhs: Vec2) -> Pixel {
        Pixel::new(self.u + rhs.x, self.v + rhs.y)
    }
}

/// Pinhole intrinsics. Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center and the given
    /// horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("empty image"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside image"));
        }
        Ok(())
    }

    /// Bearing `((u-cx)/fx, (v-cy)/fy, 1)`.
    #[inline]
    pub fn ray(&self, p: Pixel) -> Vec3 {
        Vec3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn in_bounds(&self, p: Pixel, margin: f64) -> bool {
        p.u >= margin
            && p.v >= margin
            && p.u <= self.width as f64 - 1.0 - margin
            && p.v <= self.height as f64 - 1.0 - margin
    }
}

pub fn backproject(p: Pixel, depth: f64, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(k.ray(p) * depth)
}

/// Pinhole projection. The caller guarantees `point.z > 0`.
#[inline]
pub fn project(point: &Vec3, k: &Intrinsics) -> Pixel {
    Pixel::new(k.fx * point.x / point.z + k.cx, k.fy * point.y / point.z + k.cy)
}

/// Result of warping a host pixel into a target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warped {
    pub pixel: Pixel,
    /// Point in the target camera frame.
    pub point: Vec3,
    pub in_bounds: bool,
}

/// Warps host pixel `p` at depth `depth` into the target frame using the
/// target-from-host pose `rel`.
pub fn warp(p: Pixel, depth: f64, rel: &Pose, k: &Intrinsics) -> Result<Warped, GeometryError> {
    let host = backproject(p, depth, k)?;
    let point = rel.transform_point(&host);
    if point.z <= MIN_WARP_DEPTH {
        return Err(GeometryError::BehindCamera(point.z));
    }
    let pixel = project(&point, k);
    Ok(Warped {
        pixel,
        point,
        in_bounds: k.in_bounds(pixel, 0.0),
    })
}

/// Unnormalized light-path directions in the host camera frame.
///
/// `β` points from the host camera center to the surface point and `β′`
/// from the target camera center to the same point, so `β′ − β = Rᵀt`.
pub fn view_directions(p: Pixel, depth: f64, rel: &Pose, k: &Intrinsics) -> Result<(Vec3, Vec3), GeometryError> {
    let beta = backproject(p, depth, k)?;
    let rt_t = rel.rotation.inverse() * rel.translation;
    Ok((beta, beta + rt_t))
}

/// Bilinear sample of `image` with the analytic gradient of the interpolant.
pub fn bilinear(image: &Image, p: Pixel) -> Result<(f64, Vec2), GeometryError> {
    let w = image.width();
    let h = image.height();
    let max_u = w as f64 - 1.0;
    let max_v = h as f64 - 1.0;
    if !(p.u >= 0.0 && p.v >= 0.0 && p.u <= max_u && p.v <= max_v) {
        return Err(GeometryError::OutOfBounds { u: p.u, v: p.v });
    }
    // The last row/column is reached with fractional part 1.
    let x0 = (p.u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (p.v.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = p.u - x0 as f64;
    let fy = p.v - y0 as f64;
    let i00 = *image.get(x0, y0) as f64;
    let i10 = *image.get(x1, y0) as f64;
    let i01 = *image.get(x0, y1) as f64;
    let i11 = *image.get(x1, y1) as f64;
    let top = i00 + fx * (i10 - i00);
    let bottom = i01 + fx * (i11 - i01);
    let value = top + fy * (bottom - top);
    let gu = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
    let gv = bottom - top;
    Ok((value, Vec2::new(gu, gv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn k() -> Intrinsics {
        Intrinsics::new(120.0, 110.0, 80.0, 60.0, 160, 120).unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = Pose::exp(&Twist::zeros());
        assert_eq!(p.angle(), 0.0);
        assert_eq!(p.translation, Vec3::zeros());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = Pose::exp(&Twist::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let x = p.transform_point(&Vec3::x());
        assert!((x - Vec3::y()).norm() < 1e-12);
        assert!(p.translation.norm() < 1e-15);
    }

    #[test]
    fn backproject_principal_ray_and_unit_tangent() {
        let k = k();
        let p = backproject(Pixel::new(k.cx, k.cy), 2.0, &k).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
        let q = backproject(Pixel::new(k.cx + k.fx, k.cy), 1.0, &k).unwrap();
        assert!((q - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-15);
        assert_eq!(
            backproject(Pixel::new(1.0, 1.0), 0.0, &k),
            Err(GeometryError::NonPositiveDepth(0.0))
        );
    }

    #[test]
    fn identity_warp_is_identity() {
        let k = k();
        let p = Pixel::new(33.25, 71.5);
        let w = warp(p, 3.0, &Pose::identity(), &k).unwrap();
        assert!(close(w.pixel.u, p.u, 1e-12) && close(w.pixel.v, p.v, 1e-12));
        assert!(w.in_bounds);
    }

    #[test]
    fn halving_depth_doubles_offset() {
        let k = k();
        let p = Pixel::new(k.cx + 10.0, k.cy - 4.0);
        // Camera moves 1 m toward a point at depth 2.
        let rel = Pose::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, -1.0));
        let w = warp(p, 2.0, &rel, &k).unwrap();
        assert!(close(w.pixel.u - k.cx, 20.0, 1e-9));
        assert!(close(w.pixel.v - k.cy, -8.0, 1e-9));
    }

    #[test]
    fn warp_behind_camera_is_rejected() {
        let k = k();
        let rel = Pose::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, -2.0));
        assert!(matches!(
            warp(Pixel::new(k.cx, k.cy), 2.0, &rel, &k),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn warp_out_of_bounds_is_flagged() {
        let k = k();
        let rel = Pose::new(UnitQuaternion::identity(), Vec3::new(5.0, 0.0, 0.0));
        let w = warp(Pixel::new(k.cx, k.cy), 2.0, &rel, &k).unwrap();
        assert!(!w.in_bounds);
    }

    #[test]
    fn view_directions_direct_substitution() {
        // P = (0,0,2) at the principal point, R = I, t = (1,0,0).
        let k = k();
        let rel = Pose::new(UnitQuaternion::identity(), Vec3::new(1.0, 0.0, 0.0));
        let (b, b2) = view_directions(Pixel::new(k.cx, k.cy), 2.0, &rel, &k).unwrap();
        assert_eq!(b, Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(b2, Vec3::new(1.0, 0.0, 2.0));
        let (c, c2) = view_directions(Pixel::new(3.0, 4.0), 1.5, &Pose::identity(), &k).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn bilinear_lattice_and_constant() {
        let img = Image::from_fn(5, 4, |x, y| (x * 3 + y * 7) as f32 * 0.01);
        let (v, _) = bilinear(&img, Pixel::new(2.0, 3.0)).unwrap();
        assert!(close(v, *img.get(2, 3) as f64, 1e-12));
        let (v, _) = bilinear(&img, Pixel::new(4.0, 3.0)).unwrap();
        assert!(close(v, *img.get(4, 3) as f64, 1e-12));
        let flat = Image::filled(5, 4, 0.3);
        let (v, g) = bilinear(&flat, Pixel::new(1.3, 2.7)).unwrap();
        assert!(close(v, 0.3f32 as f64, 1e-12));
        assert_eq!(g, Vec2::zeros());
        assert!(matches!(
            bilinear(&flat, Pixel::new(4.01, 0.0)),
            Err(GeometryError::OutOfBounds { .. })
        ));
    }

    fn twist_strategy() -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..3.0,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("nonzero axis", |(axis, angle, t)| {
                let a = Vec3::from(axis);
                let n = a.norm();
                (n > 1e-3).then(|| {
                    let w = a / n * angle;
                    Twist::new(w.x, w.y, w.z, t[0], t[1], t[2])
                })
            })
    }

    fn matrix_warp(p: Pixel, d: f64, rel: &Pose, k: &Intrinsics) -> Pixel {
        let kmat = nalgebra::Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
        let kinv = kmat.try_inverse().unwrap();
        let h = kinv * Vec3::new(p.u, p.v, 1.0) * d;
        let x = rel.to_matrix() * nalgebra::Vector4::new(h.x, h.y, h.z, 1.0);
        let q = kmat * Vec3::new(x.x, x.y, x.z);
        Pixel::new(q.x / q.z, q.y / q.z)
    }

    proptest! {
        #[test]
        fn se3_log_exp_round_trip(xi in twist_strategy()) {
            let back = Pose::exp(&xi).log();
            prop_assert!((back - xi).norm() < 1e-9, "{xi:?} vs {back:?}");
        }

        #[test]
        fn compose_with_inverse_is_identity(xi in twist_strategy()) {
            let p = Pose::exp(&xi);
            let id = p.compose(&p.inverse());
            prop_assert!(id.angle() < 1e-9);
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!((id.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn project_backproject_round_trip(u in 0.0f64..159.0, v in 0.0f64..119.0, d in 0.05f64..50.0) {
            let k = k();
            let p = Pixel::new(u, v);
            let q = project(&backproject(p, d, &k).unwrap(), &k);
            prop_assert!((q.u - u).abs() < 1e-9 && (q.v - v).abs() < 1e-9);
        }

        #[test]
        fn backproject_project_round_trip(x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.1f64..20.0) {
            let k = k();
            let pt = Vec3::new(x, y, z);
            let back = backproject(project(&pt, &k), z, &k).unwrap();
            prop_assert!((back - pt).norm() <= 1e-9 * pt.norm());
        }

        #[test]
        fn warp_matches_matrix_chain(xi in twist_strategy(), u in 10.0f64..150.0, v in 10.0f64..110.0, d in 0.5f64..10.0) {
            let k = k();
            let rel = Pose::exp(&(xi * 0.1));
            let p = Pixel::new(u, v);
            if let Ok(w) = warp(p, d, &rel, &k) {
                let m = matrix_warp(p, d, &rel, &k);
                prop_assert!((w.pixel.u - m.u).abs() < 1e-9 * (1.0 + m.u.abs()));
                prop_assert!((w.pixel.v - m.v).abs() < 1e-9 * (1.0 + m.v.abs()));
            }
        }

        #[test]
        fn beta_prime_is_ray_from_target_center(xi in twist_strategy(), u in 0.0f64..159.0, v in 0.0f64..119.0, d in 0.1f64..10.0) {
            let k = k();
            let rel = Pose::exp(&xi);
            let (b, b2) = view_directions(Pixel::new(u, v), d, &rel, &k).unwrap();
            let target_center_in_host = rel.inverse().translation;
            let expected = b - target_center_in_host;
            prop_assert!((b2 - expected).norm() < 1e-12 * (1.0 + b.norm() + rel.translation.norm()));
        }

        #[test]
        fn bilinear_gradient_matches_finite_differences(seed in 0u64..1000, u in 0.2f64..6.8, v in 0.2f64..4.8) {
            let img = Image::from_fn(8, 6, |x, y| {
                let h = (x as u64 * 31 + y as u64 * 17 + seed * 7919) % 97;
                h as f32 / 97.0
            });
            // Stay clear of lattice lines so the interpolant is smooth locally.
            prop_assume!((u - u.round()).abs() > 1e-3 && (v - v.round()).abs() > 1e-3);
            let h = 1e-4;
            let (_, g) = bilinear(&img, Pixel::new(u, v)).unwrap();
            let du = (bilinear(&img, Pixel::new(u + h, v)).unwrap().0 - bilinear(&img, Pixel::new(u - h, v)).unwrap().0) / (2.0 * h);
            let dv = (bilinear(&img, Pixel::new(u, v + h)).unwrap().0 - bilinear(&img, Pixel::new(u, v - h)).unwrap().0) / (2.0 * h);
            prop_assert!((g.x - du).abs() < 1e-5 && (g.y - dv).abs() < 1e-5);
        }
    }
}
