//! Specular radiance toward a viewer, from environment illumination and a
//! microfacet BRDF.
//!
//! The fast path factorizes the reflection integral into the mean incident
//! radiance over the GGX lobe around the mirror direction (read from a
//! [`PrefilteredEnv`]) times the directional albedo of the lobe (read from a
//! [`BrdfTable`]). [`oracle_radiance`] integrates the unfactorized product by
//! importance-sampled Monte Carlo and serves as the reference.

mod brdf_table;
mod envmap;
pub mod microfacet;
mod prefilter;

pub use brdf_table::{directional_albedo, BrdfTable, DEFAULT_TABLE_SAMPLES, DEFAULT_TABLE_SIZE};
pub use envmap::{
    dir_to_equirect, equirect_to_dir, sample_grid, texel_dir, texel_solid_angle, weighted_mean, EnvironmentMap,
};
pub use prefilter::{PrefilteredEnv, DEFAULT_LEVELS, DEFAULT_PREFILTER_SAMPLES};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Vec3;
use microfacet::{alpha, reflect, sample_ggx_half, sampled_weight, tangent_frame, to_world};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadianceError {
    #[error("direction is not unit length (|d| = {0})")]
    NonUnitDirection(f64),
    #[error("surface faces away from the viewer (n·v = {0})")]
    BackFacing(f64),
    #[error("invalid view direction")]
    ZeroView,
    #[error("invalid environment map: {0}")]
    InvalidEnvironment(String),
    #[error("control index {0} has no environment")]
    UnknownControl(usize),
    #[error("roughness {0} outside [0, 1]")]
    BadRoughness(f64),
}

/// Prefiltered illumination per control point and the shared albedo table.
#[derive(Debug, Clone)]
pub struct RadianceContext {
    envs: Vec<PrefilteredEnv>,
    brdf: Arc<BrdfTable>,
}

impl RadianceContext {
    pub fn new(envs: Vec<PrefilteredEnv>, brdf: Arc<BrdfTable>) -> Self {
        Self { envs, brdf }
    }

    /// Prefilters each map with the default level count and sample budget.
    pub fn from_environments(maps: &[EnvironmentMap], brdf: Arc<BrdfTable>) -> Self {
        let envs = maps
            .iter()
            .map(|m| PrefilteredEnv::build(m, DEFAULT_LEVELS, DEFAULT_PREFILTER_SAMPLES))
            .collect();
        Self { envs, brdf }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn env(&self, control: usize) -> Option<&PrefilteredEnv> {
        self.envs.get(control)
    }

    pub fn brdf(&self) -> &BrdfTable {
        &self.brdf
    }
}

/// Unit surface→viewer vector for a camera→surface direction `beta`, checked
/// against the normal.
fn view_vector(n: &Vec3, beta: &Vec3) -> Result<(Vec3, f64), RadianceError> {
    let len = n.norm();
    if !((len - 1.0).abs() <= 1e-6) {
        return Err(RadianceError::NonUnitDirection(len));
    }
    let b = beta.norm();
    if !(b > 0.0 && b.is_finite()) {
        return Err(RadianceError::ZeroView);
    }
    let v = -beta / b;
    let nv = n.dot(&v);
    if nv <= 0.0 {
        return Err(RadianceError::BackFacing(nv));
    }
    Ok((v, nv))
}

fn check_roughness(r: f64) -> Result<(), RadianceError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(RadianceError::BadRoughness(r))
    }
}

/// Split-sum radiance (luminance) reflected along `-beta` by a surface with
/// unit normal `n` and roughness `r_s`. All vectors share the frame of the
/// environment map.
pub fn eval_radiance(
    ctx: &RadianceContext,
    control: usize,
    n: &Vec3,
    beta: &Vec3,
    roughness: f64,
) -> Result<f64, RadianceError> {
    check_roughness(roughness)?;
    let env = ctx.env(control).ok_or(RadianceError::UnknownControl(control))?;
    let (v, nv) = view_vector(n, beta)?;
    let rho = reflect(&v, n).normalize();
    let light = env.sample(&rho, roughness);
    Ok(light * ctx.brdf.lookup(nv, roughness))
}

/// Monte-Carlo estimate of `∫ I(l)·cosθ_l·f(l, v) dl` with GGX importance
/// sampling; deterministic for a given seed.
pub fn oracle_radiance(
    env: &EnvironmentMap,
    n: &Vec3,
    beta: &Vec3,
    roughness: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, RadianceError> {
    check_roughness(roughness)?;
    let (v, nv) = view_vector(n, beta)?;
    let a = alpha(roughness);
    let (t, b) = tangent_frame(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let h = to_world(&sample_ggx_half((rng.random(), rng.random()), a), &t, &b, n);
        let vh = v.dot(&h);
        let l = h * (2.0 * vh) - v;
        let nl = n.dot(&l);
        let w = sampled_weight(nv, nl, n.dot(&h), vh, a);
        if w > 0.0 {
            acc += w * env.sample_luminance(&l.normalize());
        }
    }
    Ok(acc / samples.max(1) as f64)
}
