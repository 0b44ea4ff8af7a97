use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::geometry::{Intrinsics, Pixel, Pose, Vec3};
use crate::grid::{luminance, Grid, Image};
use crate::radiance::microfacet::{alpha, ggx_d, reflect, sample_ggx_half, specular_brdf, tangent_frame, to_world};
use crate::radiance::{texel_dir, EnvironmentMap};

use super::spec::{LightSpec, PlaneSpec, SceneSpec, SgLobe, Texture};
use super::SceneError;

/// Offset along the normal for rays leaving a surface.
const RAY_EPSILON: f64 = 1e-6;
/// Positions closer than this to a plane cannot host an environment map.
pub const MIN_PLANE_DISTANCE: f64 = 1e-3;

/// Mixture probabilities of the three sampling strategies.
const P_DIFFUSE: f64 = 0.4;
const P_SPECULAR: f64 = 0.4;

/// A planar quad prepared for ray casting.
#[derive(Debug, Clone)]
struct Quad {
    origin: Vec3,
    normal: Vec3,
    /// In-plane orthonormal axes; `u` follows the first edge.
    u: Vec3,
    v: Vec3,
    corners: [Vec3; 4],
    edge_len: f64,
    spec: PlaneSpec,
}

fn in_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3, n: &Vec3) -> bool {
    let s1 = (b - a).cross(&(p - a)).dot(n);
    let s2 = (c - b).cross(&(p - b)).dot(n);
    let s3 = (a - c).cross(&(p - c)).dot(n);
    (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
}

impl Quad {
    fn new(spec: &PlaneSpec) -> Self {
        let c = spec.corners;
        let e1 = c[1] - c[0];
        let normal = e1.cross(&(c[3] - c[0])).normalize();
        let u = e1.normalize();
        Self {
            origin: c[0],
            normal,
            u,
            v: normal.cross(&u),
            corners: c,
            edge_len: e1.norm(),
            spec: spec.clone(),
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        let c = &self.corners;
        in_triangle(p, &c[0], &c[1], &c[2], &self.normal) || in_triangle(p, &c[0], &c[2], &c[3], &self.normal)
    }

    /// Ray parameter of the hit, for `t > t_min`.
    fn intersect(&self, o: &Vec3, d: &Vec3, t_min: f64) -> Option<f64> {
        let denom = self.normal.dot(d);
        if denom.abs() < 1e-14 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - o)) / denom;
        if !(t > t_min) {
            return None;
        }
        self.contains(&(o + d * t)).then_some(t)
    }

    fn local(&self, p: &Vec3) -> (f64, f64) {
        let q = p - self.origin;
        (q.dot(&self.u), q.dot(&self.v))
    }

    fn albedo(&self, p: &Vec3) -> [f64; 3] {
        let (s, t) = self.local(p);
        texture_color(&self.spec.albedo, s, t)
    }

    fn roughness(&self, p: &Vec3) -> f64 {
        let (s, _) = self.local(p);
        let r = self.spec.roughness;
        let f = (s / self.edge_len).clamp(0.0, 1.0);
        r.start + (r.end - r.start) * f
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let sx = smoothstep(0.0, 1.0, x - fx);
    let sy = smoothstep(0.0, 1.0, y - fy);
    let v = |dx, dy| lattice_value(ix + dx, iy + dy, seed);
    let top = v(0, 0) + sx * (v(1, 0) - v(0, 0));
    let bottom = v(0, 1) + sx * (v(1, 1) - v(0, 1));
    top + sy * (bottom - top)
}

fn mix(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

pub fn texture_color(tex: &Texture, s: f64, t: f64) -> [f64; 3] {
    match tex {
        Texture::Constant(c) => *c,
        Texture::Checker { a, b, cell, softness } => {
            let w = (PI * s / cell).sin() * (PI * t / cell).sin();
            let f = if *softness > 0.0 {
                smoothstep(-softness, *softness, w)
            } else if w >= 0.0 {
                1.0
            } else {
                0.0
            };
            mix(b, a, f)
        }
        Texture::Noise { a, b, cell, seed } => {
            let n = 0.65 * value_noise(s / cell, t / cell, *seed)
                + 0.35 * value_noise(2.0 * s / cell, 2.0 * t / cell, seed ^ 0x5bd1);
            mix(b, a, n)
        }
    }
}

fn sg_pdf(lobe: &SgLobe, dir: &Vec3) -> f64 {
    let k = lobe.sharpness;
    k / (2.0 * PI * (1.0 - (-2.0 * k).exp())) * (k * (dir.dot(&lobe.axis) - 1.0)).exp()
}

fn sample_sg(lobe: &SgLobe, xi: (f64, f64)) -> Vec3 {
    let k = lobe.sharpness;
    let w = 1.0 + (xi.0 + (1.0 - xi.0) * (-2.0 * k).exp()).max(f64::MIN_POSITIVE).ln() / k;
    let s = (1.0 - w * w).max(0.0).sqrt();
    let phi = 2.0 * PI * xi.1;
    let (t, b) = tangent_frame(&lobe.axis);
    to_world(&Vec3::new(s * phi.cos(), s * phi.sin(), w), &t, &b, &lobe.axis)
}

/// Ray-castable scene with its (possibly rescaled) lighting.
#[derive(Debug, Clone)]
pub struct Tracer {
    quads: Vec<Quad>,
    light: LightSpec,
    /// Lobe selection probabilities, proportional to amplitude luminance.
    lobe_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    quad: usize,
}

/// Channels of one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRender {
    /// Linear luminance before noise and clamping.
    pub radiance: Image,
    pub depth: Image,
    /// Camera-frame unit normals facing the camera; zero where nothing was hit.
    pub normals: Grid<Vec3>,
    pub roughness: Image,
}

impl Tracer {
    pub fn new(scene: &SceneSpec) -> Self {
        Self::with_light(scene, scene.light.clone())
    }

    pub fn with_light(scene: &SceneSpec, light: LightSpec) -> Self {
        let weights: Vec<f64> = light.lobes.iter().map(|l| luminance(l.amplitude).max(1e-12)).collect();
        let total: f64 = weights.iter().sum();
        Self {
            quads: scene.planes.iter().map(Quad::new).collect(),
            lobe_probs: weights.iter().map(|w| w / total).collect(),
            light,
        }
    }

    pub fn light(&self) -> &LightSpec {
        &self.light
    }

    fn cast(&self, o: &Vec3, d: &Vec3, t_min: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, q) in self.quads.iter().enumerate() {
            if let Some(t) = q.intersect(o, d, t_min) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, quad: i });
                }
            }
        }
        best
    }

    fn strategy_weights(&self) -> (f64, f64, f64) {
        if self.light.lobes.is_empty() {
            (0.5, 0.5, 0.0)
        } else {
            (P_DIFFUSE, P_SPECULAR, 1.0 - P_DIFFUSE - P_SPECULAR)
        }
    }

    fn mixture_pdf(&self, n: &Vec3, v: &Vec3, l: &Vec3, a: f64) -> f64 {
        let (pd, ps, pl) = self.strategy_weights();
        let nl = n.dot(l);
        let mut pdf = 0.0;
        if nl > 0.0 {
            pdf += pd * nl / PI;
        }
        let h = (v + l).normalize();
        let (nh, vh) = (n.dot(&h), v.dot(&h));
        if nh > 0.0 && vh > 0.0 {
            pdf += ps * ggx_d(nh, a) * nh / (4.0 * vh);
        }
        if pl > 0.0 {
            pdf += pl
                * self
                    .light
                    .lobes
                    .iter()
                    .zip(&self.lobe_probs)
                    .map(|(lobe, p)| p * sg_pdf(lobe, l))
                    .sum::<f64>();
        }
        pdf
    }

    /// Direction from the one-sample mixture. `u` picks the strategy, `xi`
    /// drives it and `pick` selects the lobe.
    fn sample_direction(&self, n: &Vec3, v: &Vec3, a: f64, u: f64, xi: (f64, f64), pick: f64) -> Vec3 {
        let (pd, ps, _) = self.strategy_weights();
        let (t, b) = tangent_frame(n);
        if u < pd {
            let r = xi.0.sqrt();
            let phi = 2.0 * PI * xi.1;
            to_world(
                &Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - xi.0).max(0.0).sqrt()),
                &t,
                &b,
                n,
            )
        } else if u < pd + ps {
            let h = to_world(&sample_ggx_half(xi, a), &t, &b, n);
            reflect(v, &h)
        } else {
            let mut pick = pick;
            let mut idx = self.lobe_probs.len() - 1;
            for (i, p) in self.lobe_probs.iter().enumerate() {
                if pick < *p {
                    idx = i;
                    break;
                }
                pick -= p;
            }
            sample_sg(&self.light.lobes[idx], xi)
        }
    }

    /// Outgoing RGB radiance at `x` on `quad` toward unit `v`, from `samples`
    /// directions. Light reaching `x` after hitting another plane is shaded
    /// recursively while `bounces > 0`, and is black otherwise.
    fn shade(&self, x: &Vec3, quad: usize, v: &Vec3, samples: usize, bounces: u32, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let q = &self.quads[quad];
        let n = if q.normal.dot(v) >= 0.0 { q.normal } else { -q.normal };
        let albedo = q.albedo(x);
        let rough = q.roughness(x);
        let a = alpha(rough);
        let origin = x + n * RAY_EPSILON;
        let mut acc = [0.0; 3];
        let shift: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
        for s in 0..samples {
            let q = |i: usize, x: f64| (x + shift[i]).fract();
            let u = q(0, (s as f64 + 0.5) / samples as f64);
            let xi = (q(1, radical_inverse(s as u64, 2)), q(2, radical_inverse(s as u64, 3)));
            let l = self.sample_direction(&n, v, a, u, xi, q(3, radical_inverse(s as u64, 5)));
            let nl = n.dot(&l);
            if nl <= 0.0 {
                continue;
            }
            let pdf = self.mixture_pdf(&n, v, &l, a);
            if !(pdf > 0.0) {
                continue;
            }
            let spec = specular_brdf(&n, v, &l, rough);
            let incoming = match self.cast(&origin, &l, 0.0) {
                None => self.light.radiance(&l),
                Some(hit) if bounces > 0 => {
                    let y = origin + l * hit.t;
                    self.shade(&y, hit.quad, &-l, 1, bounces - 1, rng)
                }
                Some(_) => [0.0; 3],
            };
            for k in 0..3 {
                acc[k] += (albedo[k] / PI + spec) * nl * incoming[k] / pdf;
            }
        }
        acc.map(|c| c / samples as f64)
    }

    /// Per-pixel render with one indirect bounce. Pixel `(x, y)` uses its own
    /// random stream derived from `(seed, frame, pixel)`.
    pub fn render(&self, pose: &Pose, k: &Intrinsics, spp: usize, seed: u64, frame: u64) -> FrameRender {
        let rot = pose.rotation;
        let eye = pose.translation;
        let (w, h) = (k.width, k.height);
        let pixels: Vec<(f32, f32, Vec3, f32)> = (0..w * h)
            .into_par_iter()
            .map(|idx| {
                let (x, y) = (idx % w, idx / w);
                let ray_cam = k.ray(Pixel::new(x as f64, y as f64));
                let dir = rot * ray_cam;
                let mut rng = pixel_rng(seed, frame, idx as u64);
                match self.cast(&eye, &dir, 0.0) {
                    None => {
                        let d = dir.normalize();
                        (luminance(self.light.radiance(&d)) as f32, 0.0, Vec3::zeros(), 0.0)
                    }
                    Some(hit) => {
                        let q = &self.quads[hit.quad];
                        let p = eye + dir * hit.t;
                        let v = -dir.normalize();
                        let c = self.shade(&p, hit.quad, &v, spp, 1, &mut rng);
                        let n_world = if q.normal.dot(&v) >= 0.0 { q.normal } else { -q.normal };
                        let n_cam = rot.inverse() * n_world;
                        (luminance(c) as f32, hit.t as f32, n_cam, q.roughness(&p) as f32)
                    }
                }
            })
            .collect();
        FrameRender {
            radiance: Grid::from_vec(w, h, pixels.iter().map(|p| p.0).collect()).expect("sized"),
            depth: Grid::from_vec(w, h, pixels.iter().map(|p| p.1).collect()).expect("sized"),
            normals: Grid::from_vec(w, h, pixels.iter().map(|p| p.2).collect()).expect("sized"),
            roughness: Grid::from_vec(w, h, pixels.iter().map(|p| p.3).collect()).expect("sized"),
        }
    }

    /// `position` moved along plane normals until it lies at least `clearance`
    /// in front of every plane whose quad it is within `reach` of, on the side
    /// facing `eye`.
    pub fn clear_of_planes(&self, position: &Vec3, eye: &Vec3, clearance: f64, reach: f64) -> Vec3 {
        let mut p = *position;
        for q in &self.quads {
            let side = q.normal.dot(&(eye - q.origin)).signum();
            let dist = side * q.normal.dot(&(p - q.origin));
            let foot = p - q.normal * q.normal.dot(&(p - q.origin));
            if dist < clearance && dist > -reach && q.contains(&foot) {
                p = foot + q.normal * (side * clearance);
            }
        }
        p
    }

    /// Incident radiance at `position`: the analytic light where the view is
    /// open, and the direct-lit radiance of the visible plane elsewhere.
    pub fn environment(
        &self,
        position: &Vec3,
        height: usize,
        spp: usize,
        seed: u64,
    ) -> Result<EnvironmentMap, SceneError> {
        for (i, q) in self.quads.iter().enumerate() {
            let dist = q.normal.dot(&(position - q.origin));
            let foot = position - q.normal * dist;
            if dist.abs() < MIN_PLANE_DISTANCE && q.contains(&foot) {
                return Err(SceneError::DegeneratePosition {
                    plane: i,
                    distance: dist.abs(),
                });
            }
        }
        let width = 2 * height;
        let texels: Vec<[f32; 3]> = (0..width * height)
            .into_par_iter()
            .map(|idx| {
                let dir = texel_dir(idx % width, idx / width, width, height);
                let c = match self.cast(position, &dir, 0.0) {
                    None => self.light.radiance(&dir),
                    Some(hit) => {
                        let mut rng = pixel_rng(seed, u64::MAX, idx as u64);
                        self.shade(&(position + dir * hit.t), hit.quad, &-dir, spp, 0, &mut rng)
                    }
                };
                c.map(|v| v as f32)
            })
            .collect();
        EnvironmentMap::new(Grid::from_vec(width, height, texels).expect("sized"))
            .map_err(|e| SceneError::Invalid(e.to_string()))
    }
}

/// Van der Corput digit reversal of `i` in `base`, in `[0, 1)`.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn pixel_rng(seed: u64, frame: u64, pixel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ frame.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(pixel);
    rng
}

/// Adds Gaussian noise of standard deviation `sigma` and clamps to `[0, 1]`.
pub fn finish_image(radiance: &Image, sigma: f64, seed: u64, frame: u64) -> Image {
    let w = radiance.width();
    let data: Vec<f32> = radiance
        .data()
        .par_iter()
        .enumerate()
        .map(|(idx, &v)| {
            let mut v = v as f64;
            if sigma > 0.0 {
                let mut rng = pixel_rng(seed ^ 0xA5A5_5A5A, frame, idx as u64);
                v += Normal::new(0.0, sigma).expect("sigma > 0").sample(&mut rng);
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    Grid::from_vec(w, radiance.height(), data).expect("sized")
}
