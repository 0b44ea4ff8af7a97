use std::path::Path;

use crate::geometry::{Intrinsics, Vec3};
use crate::kv::{KvError, KvFile};

use super::SceneError;

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant([f64; 3]),
    /// Two-color checkerboard with square cells of edge `cell` meters. The
    /// transition between colors spans a fraction `softness` of the
    /// half-period (0 gives hard edges).
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        cell: f64,
        softness: f64,
    },
    /// Smooth value noise with lattice spacing `cell` meters, blending `a` and `b`.
    Noise {
        a: [f64; 3],
        b: [f64; 3],
        cell: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roughness {
    pub start: f64,
    /// Value at the far end of the first edge; equal to `start` for constant roughness.
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSpec {
    /// Planar quad, corners in order.
    pub corners: [Vec3; 4],
    pub albedo: Texture,
    pub roughness: Roughness,
}

/// Spherical Gaussian `amplitude · exp(sharpness·(ω·axis − 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgLobe {
    pub axis: Vec3,
    pub sharpness: f64,
    pub amplitude: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightSpec {
    pub ambient: [f64; 3],
    pub lobes: Vec<SgLobe>,
}

impl LightSpec {
    pub fn radiance(&self, dir: &Vec3) -> [f64; 3] {
        let mut c = self.ambient;
        for l in &self.lobes {
            let g = (l.sharpness * (dir.dot(&l.axis) - 1.0)).exp();
            for (c, a) in c.iter_mut().zip(l.amplitude) {
                *c += a * g;
            }
        }
        c
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            ambient: self.ambient.map(|v| v * s),
            lobes: self
                .lobes
                .iter()
                .map(|l| SgLobe {
                    amplitude: l.amplitude.map(|v| v * s),
                    ..*l
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub spp: usize,
    pub env_spp: usize,
    pub env_height: usize,
    /// Standard deviation of additive image noise.
    pub noise: f64,
    /// Target mean intensity of the first frame; lights are rescaled to reach it.
    /// Zero keeps the lights as given.
    pub exposure_mean: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            spp: 256,
            env_spp: 64,
            env_height: 32,
            noise: 1.0 / 255.0,
            exposure_mean: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    pub light: LightSpec,
    pub render: RenderSettings,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Path3 {
    /// Camera circling `center` at `radius`, `height` above it, sweeping
    /// `arc_deg` degrees starting at azimuth `start_deg`, always looking at `center`.
    Orbit {
        center: Vec3,
        radius: f64,
        height: f64,
        start_deg: f64,
        arc_deg: f64,
    },
    /// Piecewise-linear camera positions and look-at targets.
    Waypoints(Vec<(Vec3, Vec3)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub frames: usize,
    pub fps: f64,
    pub path: Path3,
    pub intrinsics: Intrinsics,
    pub perturb_rot_deg: f64,
    pub perturb_trans: f64,
    pub perturb_seed: u64,
    pub controls_k: usize,
    pub controls_m: f64,
}

fn required<T>(v: Option<T>, key: &str) -> Result<T, KvError> {
    v.ok_or_else(|| KvError::Missing(key.to_string()))
}

fn check_keys(kv: &KvFile, allowed: impl Fn(&str) -> bool) -> Result<(), KvError> {
    match kv.keys().find(|k| !allowed(k)) {
        Some(k) => Err(KvError::Unknown(k.to_string())),
        None => Ok(()),
    }
}

fn is_indexed(key: &str, prefix: &str, fields: &[&str]) -> bool {
    let Some(rest) = key.strip_prefix(prefix) else {
        return false;
    };
    let Some((idx, field)) = rest.split_once('.') else {
        return false;
    };
    idx.parse::<usize>().is_ok() && fields.contains(&field)
}

const PLANE_FIELDS: &[&str] = &[
    "corners",
    "albedo",
    "color",
    "color2",
    "cell",
    "softness",
    "noise_seed",
    "roughness",
    "roughness_end",
];
const LOBE_FIELDS: &[&str] = &["axis", "sharpness", "amplitude"];
const SCENE_KEYS: &[&str] = &[
    "seed",
    "light.ambient",
    "render.spp",
    "render.env_spp",
    "render.env_height",
    "render.noise",
    "render.exposure_mean",
];

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_kv(&KvFile::load(path)?)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self, SceneError> {
        check_keys(kv, |k| {
            SCENE_KEYS.contains(&k)
                || is_indexed(k, "plane.", PLANE_FIELDS)
                || is_indexed(k, "light.lobe.", LOBE_FIELDS)
        })?;
        let mut planes = Vec::new();
        for i in kv.indices("plane") {
            let key = |f: &str| format!("plane.{i}.{f}");
            let c = required(kv.floats(&key("corners"))?, &key("corners"))?;
            if c.len() != 12 {
                return Err(SceneError::Invalid(format!("{} needs 12 numbers", key("corners"))));
            }
            let corners = [0, 1, 2, 3].map(|j| Vec3::new(c[3 * j], c[3 * j + 1], c[3 * j + 2]));
            let color = kv.color(&key("color"))?.unwrap_or([0.5; 3]);
            let color2 = kv.color(&key("color2"))?.unwrap_or([0.1; 3]);
            let cell = kv.f64_or(&key("cell"), 0.1)?;
            let albedo = match kv.get(&key("albedo")).unwrap_or("constant") {
                "constant" => Texture::Constant(color),
                "checker" => Texture::Checker {
                    a: color,
                    b: color2,
                    cell,
                    softness: kv.f64_or(&key("softness"), 0.3)?,
                },
                "noise" => Texture::Noise {
                    a: color,
                    b: color2,
                    cell,
                    seed: kv.u64_or(&key("noise_seed"), i as u64)?,
                },
                other => {
                    return Err(SceneError::Invalid(format!(
                        "{}: unknown texture `{other}` (constant, checker, noise)",
                        key("albedo")
                    )))
                }
            };
            let start = kv.f64_or(&key("roughness"), 0.5)?;
            let end = kv.f64_or(&key("roughness_end"), start)?;
            planes.push(PlaneSpec {
                corners,
                albedo,
                roughness: Roughness { start, end },
            });
        }
        let mut lobes = Vec::new();
        for i in kv.indices("light.lobe") {
            let key = |f: &str| format!("light.lobe.{i}.{f}");
            let axis = required(kv.triple(&key("axis"))?, &key("axis"))?;
            lobes.push(SgLobe {
                axis: Vec3::from(axis),
                sharpness: required(kv.parse_opt(&key("sharpness"), "number")?, &key("sharpness"))?,
                amplitude: required(kv.color(&key("amplitude"))?, &key("amplitude"))?,
            });
        }
        let d = RenderSettings::default();
        let spec = Self {
            planes,
            light: LightSpec {
                ambient: kv.color("light.ambient")?.unwrap_or([0.0; 3]),
                lobes,
            },
            render: RenderSettings {
                spp: kv.usize_or("render.spp", d.spp)?,
                env_spp: kv.usize_or("render.env_spp", d.env_spp)?,
                env_height: kv.usize_or("render.env_height", d.env_height)?,
                noise: kv.f64_or("render.noise", d.noise)?,
                exposure_mean: kv.f64_or("render.exposure_mean", d.exposure_mean)?,
            },
            seed: kv.u64_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec.normalized())
    }

    fn normalized(mut self) -> Self {
        for l in &mut self.light.lobes {
            l.axis = l.axis.normalize();
        }
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if self.planes.is_empty() {
            return bad("scene needs at least one plane".into());
        }
        for (i, p) in self.planes.iter().enumerate() {
            for r in [p.roughness.start, p.roughness.end] {
                if !(0.02..=1.0).contains(&r) {
                    return bad(format!("plane {i}: roughness {r} outside [0.02, 1]"));
                }
            }
            let n = (p.corners[1] - p.corners[0]).cross(&(p.corners[3] - p.corners[0]));
            if n.norm() < 1e-9 {
                return bad(format!("plane {i}: degenerate corners"));
            }
            let off = (p.corners[2] - p.corners[0]).dot(&n.normalize()).abs();
            if off > 1e-6 {
                return bad(format!("plane {i}: corners are not coplanar ({off} m)"));
            }
            if let Texture::Checker { cell, .. } | Texture::Noise { cell, .. } = p.albedo {
                if !(cell > 0.0) {
                    return bad(format!("plane {i}: texture cell must be > 0"));
                }
            }
        }
        for (i, l) in self.light.lobes.iter().enumerate() {
            if !(l.sharpness > 0.0) || l.axis.norm() < 1e-12 {
                return bad(format!("lobe {i}: sharpness must be > 0 and axis non-zero"));
            }
            if l.amplitude.iter().any(|a| *a < 0.0) {
                return bad(format!("lobe {i}: negative amplitude"));
            }
        }
        if self.light.ambient.iter().any(|a| *a < 0.0) {
            return bad("negative ambient radiance".into());
        }
        if self.render.spp == 0 || self.render.env_spp == 0 || self.render.env_height < 2 {
            return bad("render sample counts must be > 0 and env_height >= 2".into());
        }
        if !(self.render.noise >= 0.0 && self.render.exposure_mean >= 0.0) {
            return bad("render.noise and render.exposure_mean must be >= 0".into());
        }
        Ok(())
    }
}

const TRAJ_KEYS: &[&str] = &[
    "frames",
    "fps",
    "orbit.center",
    "orbit.radius",
    "orbit.height",
    "orbit.start",
    "orbit.arc",
    "camera.width",
    "camera.height",
    "camera.hfov",
    "perturb.rot_deg",
    "perturb.trans",
    "perturb.seed",
    "controls.k",
    "controls.m",
];

impl TrajectorySpec {
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_kv(&KvFile::load(path)?)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self, SceneError> {
        check_keys(kv, |k| {
            TRAJ_KEYS.contains(&k) || is_indexed(k, "waypoint.", &["position", "look_at"])
        })?;
        let waypoints = kv.indices("waypoint");
        let path = if waypoints.is_empty() {
            Path3::Orbit {
                center: Vec3::from(kv.triple("orbit.center")?.unwrap_or([0.0; 3])),
                radius: kv.f64_or("orbit.radius", 1.0)?,
                height: kv.f64_or("orbit.height", 0.0)?,
                start_deg: kv.f64_or("orbit.start", 0.0)?,
                arc_deg: kv.f64_or("orbit.arc", 30.0)?,
            }
        } else {
            let mut pts = Vec::new();
            for i in waypoints {
                let p = format!("waypoint.{i}.position");
                let l = format!("waypoint.{i}.look_at");
                pts.push((
                    Vec3::from(required(kv.triple(&p)?, &p)?),
                    Vec3::from(required(kv.triple(&l)?, &l)?),
                ));
            }
            Path3::Waypoints(pts)
        };
        let width = kv.usize_or("camera.width", 160)?;
        let height = kv.usize_or("camera.height", 120)?;
        let spec = Self {
            frames: kv.usize_or("frames", 20)?,
            fps: kv.f64_or("fps", 30.0)?,
            path,
            intrinsics: Intrinsics::from_fov(width, height, kv.f64_or("camera.hfov", 60.0)?),
            perturb_rot_deg: kv.f64_or("perturb.rot_deg", 0.5)?,
            perturb_trans: kv.f64_or("perturb.trans", 0.02)?,
            perturb_seed: kv.u64_or("perturb.seed", 1)?,
            controls_k: kv.usize_or("controls.k", crate::control::DEFAULT_CLUSTERS)?,
            controls_m: kv.f64_or("controls.m", crate::control::DEFAULT_COMPACTNESS)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.frames < 2 {
            return bad("trajectory needs at least 2 frames");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be > 0");
        }
        if let Path3::Waypoints(w) = &self.path {
            if w.is_empty() {
                return bad("waypoint list is empty");
            }
        }
        if !(self.perturb_rot_deg >= 0.0 && self.perturb_trans >= 0.0) {
            return bad("perturbation sigmas must be >= 0");
        }
        if self.controls_k == 0 {
            return bad("controls.k must be > 0");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SceneError::Invalid(e.to_string()))
    }
}
