//! Cook–Torrance specular reflection: GGX distribution, height-correlated
//! Smith masking and Schlick Fresnel. Roughness `r_s` maps to `α = r_s²`.

use std::f64::consts::PI;

use crate::geometry::Vec3;

/// Normal-incidence reflectance of the fixed dielectric.
pub const F0: f64 = 0.04;

#[inline]
pub fn alpha(roughness: f64) -> f64 {
    roughness * roughness
}

/// GGX normal distribution `D(h)`.
#[inline]
pub fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let c2 = n_dot_h * n_dot_h;
    let d = c2 * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Smith `Λ` for GGX.
#[inline]
pub fn smith_lambda(cos_theta: f64, alpha: f64) -> f64 {
    let c2 = cos_theta * cos_theta;
    if c2 <= 0.0 {
        return f64::INFINITY;
    }
    let tan2 = (1.0 - c2).max(0.0) / c2;
    0.5 * (-1.0 + (1.0 + alpha * alpha * tan2).sqrt())
}

/// Height-correlated masking-shadowing `G2`.
#[inline]
pub fn smith_g2(n_dot_v: f64, n_dot_l: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(n_dot_v, alpha) + smith_lambda(n_dot_l, alpha))
}

#[inline]
pub fn fresnel_schlick(v_dot_h: f64, f0: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - v_dot_h.clamp(0.0, 1.0)).powi(5)
}

/// Specular BRDF value for unit `n`, `v` (surface→viewer) and `l` (surface→light).
pub fn specular_brdf(n: &Vec3, v: &Vec3, l: &Vec3, roughness: f64) -> f64 {
    let nv = n.dot(v);
    let nl = n.dot(l);
    if nv <= 0.0 || nl <= 0.0 {
        return 0.0;
    }
    let h = (v + l).normalize();
    let a = alpha(roughness);
    ggx_d(n.dot(&h), a) * smith_g2(nv, nl, a) * fresnel_schlick(v.dot(&h), F0) / (4.0 * nv * nl)
}

/// Half vector in the local frame (`z` = normal) distributed as `D(h)·cosθ_h`.
#[inline]
pub fn sample_ggx_half(xi: (f64, f64), alpha: f64) -> Vec3 {
    let (u1, u2) = xi;
    let a2 = alpha * alpha;
    let cos2 = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).clamp(0.0, 1.0);
    let cos_t = cos2.sqrt();
    let sin_t = (1.0 - cos2).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// `f·cosθ_l / pdf(l)` for a light direction drawn by reflecting `v` about a
/// half vector sampled with [`sample_ggx_half`]: `F·G2·(v·h) / ((n·v)(n·h))`.
#[inline]
pub fn sampled_weight(n_dot_v: f64, n_dot_l: f64, n_dot_h: f64, v_dot_h: f64, alpha: f64) -> f64 {
    if n_dot_l <= 0.0 || n_dot_h <= 0.0 || v_dot_h <= 0.0 {
        return 0.0;
    }
    fresnel_schlick(v_dot_h, F0) * smith_g2(n_dot_v, n_dot_l, alpha) * v_dot_h / (n_dot_v * n_dot_h)
}

/// Orthonormal basis `(t, b)` completing unit `n`.
#[inline]
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t = helper.cross(n).normalize();
    let b = n.cross(&t);
    (t, b)
}

#[inline]
pub fn to_world(local: &Vec3, t: &Vec3, b: &Vec3, n: &Vec3) -> Vec3 {
    t * local.x + b * local.y + n * local.z
}

/// Mirror `d` about unit `n`: `2(n·d)n − d`.
#[inline]
pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    n * (2.0 * n.dot(d)) - d
}

/// Point `i` of an `n`-point Hammersley set.
#[inline]
pub fn hammersley(i: u32, n: u32) -> (f64, f64) {
    (
        (i as f64 + 0.5) / n as f64,
        i.reverse_bits() as f64 * (1.0 / 4_294_967_296.0),
    )
}
