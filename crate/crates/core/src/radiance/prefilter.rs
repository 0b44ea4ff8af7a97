use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::geometry::Vec3;
use crate::grid::{Grid, Image};
use crate::pfm::{self, PfmError};

use super::envmap::{sample_grid, texel_dir, EnvironmentMap};
use super::microfacet::{alpha, hammersley, sample_ggx_half, tangent_frame, to_world};

pub const DEFAULT_LEVELS: usize = 9;
pub const DEFAULT_PREFILTER_SAMPLES: u32 = 1024;

/// Luminance of an environment map convolved with the GGX lobe at evenly
/// spaced roughness levels `r_s = i / (levels − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefilteredEnv {
    levels: Vec<Image>,
}

/// Lobe directions in the local frame (`z` = mirror direction) and their
/// `n·l` weights, shared by every texel of a level.
fn lobe_samples(roughness: f64, samples: u32) -> Vec<(Vec3, f64)> {
    let a = alpha(roughness);
    (0..samples)
        .filter_map(|i| {
            let h = sample_ggx_half(hammersley(i, samples), a);
            // v = n = z; l = 2(v·h)h − v
            let l = h * (2.0 * h.z) - Vec3::z();
            (l.z > 0.0).then_some((l, l.z))
        })
        .collect()
}

impl PrefilteredEnv {
    pub fn build(env: &EnvironmentMap, levels: usize, samples: u32) -> Self {
        assert!(levels >= 2, "need at least two roughness levels");
        let (w, h) = (env.width(), env.height());
        let src = env.luminance();
        let mut out = Vec::with_capacity(levels);
        out.push(src.clone());
        for level in 1..levels {
            let roughness = level as f64 / (levels - 1) as f64;
            let lobe = lobe_samples(roughness, samples);
            let total: f64 = lobe.iter().map(|(_, wt)| wt).sum();
            let rows: Vec<Vec<f32>> = (0..h)
                .into_par_iter()
                .map(|j| {
                    (0..w)
                        .map(|i| {
                            let rho = texel_dir(i, j, w, h);
                            let (t, b) = tangent_frame(&rho);
                            let mut acc = 0.0;
                            for (l, wt) in &lobe {
                                acc += sample_grid(src, &to_world(l, &t, &b, &rho)) * wt;
                            }
                            (acc / total) as f32
                        })
                        .collect()
                })
                .collect();
            let data = rows.into_iter().flatten().collect();
            out.push(Grid::from_vec(w, h, data).expect("row sizes match"));
        }
        Self { levels: out }
    }

    pub fn from_levels(levels: Vec<Image>) -> Option<Self> {
        let first = levels.first()?;
        if levels.len() < 2 || levels.iter().any(|l| !l.same_size(first)) {
            return None;
        }
        Some(Self { levels })
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Bilinear in direction, linear in roughness.
    pub fn sample(&self, dir: &Vec3, roughness: f64) -> f64 {
        let top = (self.levels.len() - 1) as f64;
        let x = roughness.clamp(0.0, 1.0) * top;
        let l0 = (x.floor() as usize).min(self.levels.len() - 2);
        let t = x - l0 as f64;
        let a = sample_grid(&self.levels[l0], dir);
        if t == 0.0 {
            return a;
        }
        let b = sample_grid(&self.levels[l0 + 1], dir);
        a + t * (b - a)
    }

    /// Writes `<base>.pref<level>.pfm` for each level.
    pub fn save(&self, base: &Path) -> Result<Vec<PathBuf>, PfmError> {
        let mut paths = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let path = level_path(base, i);
            pfm::write_gray(&path, level)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn load(base: &Path, levels: usize) -> Result<Self, PfmError> {
        let grids = (0..levels)
            .map(|i| pfm::read_gray(&level_path(base, i)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_levels(grids).ok_or_else(|| PfmError::BadHeader("inconsistent prefiltered levels".into()))
    }
}

fn level_path(base: &Path, level: usize) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".pref{level}.pfm"));
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pixel;
    use crate::radiance::envmap::{equirect_to_dir, weighted_mean};
    use crate::radiance::microfacet::ggx_d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sg(axis: Vec3, sharpness: f64, amp: f64) -> impl Fn(&Vec3) -> f64 {
        move |d: &Vec3| amp * (sharpness * (d.dot(&axis) - 1.0)).exp()
    }

    #[test]
    fn constant_map_stays_constant() {
        let env = EnvironmentMap::constant(16, 2.5);
        let pre = PrefilteredEnv::build(&env, DEFAULT_LEVELS, 256);
        for level in pre.levels() {
            for v in level.data() {
                assert!((*v as f64 - 2.5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn level_zero_is_source_luminance() {
        let f = sg(Vec3::new(0.2, 0.9, 0.1).normalize(), 30.0, 5.0);
        let env = EnvironmentMap::from_fn(16, |d| [f(d) + 0.1, 0.3, 0.0]).unwrap();
        let pre = PrefilteredEnv::build(&env, 3, 64);
        assert_eq!(&pre.levels()[0], env.luminance());
    }

    #[test]
    fn bright_texel_peak_decreases_with_roughness() {
        let mut rgb = Grid::filled(64, 32, [0.0f32; 3]);
        rgb.set(20, 12, [100.0; 3]);
        let env = EnvironmentMap::new(rgb).unwrap();
        let pre = PrefilteredEnv::build(&env, DEFAULT_LEVELS, DEFAULT_PREFILTER_SAMPLES);
        let peaks: Vec<f32> = pre
            .levels()
            .iter()
            .map(|l| l.data().iter().cloned().fold(0.0, f32::max))
            .collect();
        for w in peaks.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{peaks:?}");
        }
    }

    #[test]
    fn levels_preserve_mean_radiance() {
        let f = sg(Vec3::new(0.3, 0.8, -0.5).normalize(), 12.0, 8.0);
        let env = EnvironmentMap::from_fn(32, |d| {
            let v = f(d) + 0.2 + 0.1 * d.x;
            [v, v, v]
        })
        .unwrap();
        let pre = PrefilteredEnv::build(&env, DEFAULT_LEVELS, DEFAULT_PREFILTER_SAMPLES);
        let base = env.mean_luminance();
        for (i, level) in pre.levels().iter().enumerate() {
            let m = weighted_mean(level);
            assert!((m - base).abs() <= 0.01 * base, "level {i}: {m} vs {base}");
        }
    }

    /// Dense quadrature of the normalized lobe-weighted mean around `rho`.
    fn quadrature_mean(f: &impl Fn(&Vec3) -> f64, rho: &Vec3, roughness: f64) -> f64 {
        let a = alpha(roughness);
        let (nt, np) = (2000, 4000);
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..nt {
            let theta = (j as f64 + 0.5) / nt as f64 * std::f64::consts::PI;
            let dw = theta.sin() * (std::f64::consts::PI / nt as f64) * (2.0 * std::f64::consts::PI / np as f64);
            for i in 0..np {
                let phi = (i as f64 + 0.5) / np as f64 * 2.0 * std::f64::consts::PI;
                let l = Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
                let nl = rho.dot(&l);
                if nl <= 0.0 {
                    continue;
                }
                let h = (rho + l).normalize();
                // pdf of l for n = v = rho is D(h)/4; weight n·l
                let k = ggx_d(rho.dot(&h), a) / 4.0 * nl * dw;
                num += k * f(&l);
                den += k;
            }
        }
        num / den
    }

    #[test]
    fn sg_prefilter_matches_dense_quadrature() {
        let axis = Vec3::new(-0.4, 0.6, 0.7).normalize();
        let f = sg(axis, 10.0, 4.0);
        let env = EnvironmentMap::from_fn(64, |d| {
            let v = f(d) + 0.05;
            [v, v, v]
        })
        .unwrap();
        let pre = PrefilteredEnv::build(&env, DEFAULT_LEVELS, DEFAULT_PREFILTER_SAMPLES);
        let g = |d: &Vec3| f(d) + 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let level = &pre.levels()[4]; // r_s = 0.5
        for _ in 0..6 {
            // texel centers: the stored value is the convolution there
            let i = rng.random_range(0..128);
            let j = rng.random_range(4..60);
            let rho = equirect_to_dir(Pixel::new(i as f64 + 0.5, j as f64 + 0.5), 128, 64);
            let expected = quadrature_mean(&g, &rho, 0.5);
            let got = *level.get(i, j) as f64;
            assert!((got - expected).abs() <= 0.02 * expected, "{got} vs {expected}");
        }
    }

    #[test]
    fn cache_round_trip() {
        let env = EnvironmentMap::from_fn(8, |d| [d.y.abs(), 0.5, 0.1]).unwrap();
        let pre = PrefilteredEnv::build(&env, 3, 32);
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ctrl");
        let paths = pre.save(&base).unwrap();
        assert!(paths[2].ends_with("ctrl.pref2.pfm"));
        assert_eq!(PrefilteredEnv::load(&base, 3).unwrap(), pre);
    }
}
