use std::f64::consts::PI;

use crate::geometry::{Pixel, Vec3};
use crate::grid::{luminance, Grid, Image, Rgb};

use super::RadianceError;

/// Tolerance on the length of direction arguments.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Maps a unit direction to continuous equirectangular coordinates.
///
/// `u = (atan2(x, z) / 2π + 0.5)·width`, `v = acos(y) / π · height`, with `+y`
/// the world up axis. Texel `(i, j)` covers `[i, i+1) × [j, j+1)`.
pub fn dir_to_equirect(dir: &Vec3, width: usize, height: usize) -> Result<Pixel, RadianceError> {
    let len = dir.norm();
    if !((len - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(RadianceError::NonUnitDirection(len));
    }
    Ok(equirect_coords(dir, width, height))
}

#[inline]
fn equirect_coords(dir: &Vec3, width: usize, height: usize) -> Pixel {
    let u = (dir.x.atan2(dir.z) / (2.0 * PI) + 0.5) * width as f64;
    let v = dir.y.clamp(-1.0, 1.0).acos() / PI * height as f64;
    Pixel::new(u, v)
}

/// Inverse of [`dir_to_equirect`].
pub fn equirect_to_dir(p: Pixel, width: usize, height: usize) -> Vec3 {
    let phi = (p.u / width as f64 - 0.5) * 2.0 * PI;
    let theta = p.v / height as f64 * PI;
    let s = theta.sin();
    Vec3::new(s * phi.sin(), theta.cos(), s * phi.cos())
}

/// Direction through the center of texel `(i, j)`.
pub fn texel_dir(i: usize, j: usize, width: usize, height: usize) -> Vec3 {
    equirect_to_dir(Pixel::new(i as f64 + 0.5, j as f64 + 0.5), width, height)
}

/// Solid angle of a texel in row `j`.
pub fn texel_solid_angle(j: usize, width: usize, height: usize) -> f64 {
    let t0 = j as f64 / height as f64 * PI;
    let t1 = (j + 1) as f64 / height as f64 * PI;
    (t0.cos() - t1.cos()) * 2.0 * PI / width as f64
}

/// Bilinear lookup with texel centers at half-integers, wrapping in `u` and
/// clamping in `v`. `dir` must be unit length.
pub fn sample_grid(grid: &Image, dir: &Vec3) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let p = equirect_coords(dir, w, h);
    let fx = p.u - 0.5;
    let fy = (p.v - 0.5).clamp(0.0, h as f64 - 1.0);
    let x0f = fx.floor();
    let tx = fx - x0f;
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let y0 = (fy.floor() as usize).min(h - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ty = fy - y0 as f64;
    let g = |x, y| *grid.get(x, y) as f64;
    let top = g(x0, y0) + tx * (g(x1, y0) - g(x0, y0));
    let bottom = g(x0, y1) + tx * (g(x1, y1) - g(x0, y1));
    top + ty * (bottom - top)
}

/// Equirectangular linear-RGB radiance map (`width = 2·height`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    rgb: Grid<Rgb>,
    luma: Image,
}

impl EnvironmentMap {
    pub fn new(rgb: Grid<Rgb>) -> Result<Self, RadianceError> {
        if rgb.width() != 2 * rgb.height() || rgb.height() == 0 {
            return Err(RadianceError::InvalidEnvironment(format!(
                "size {}x{} is not 2:1",
                rgb.width(),
                rgb.height()
            )));
        }
        if let Some(bad) = rgb.data().iter().flatten().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(RadianceError::InvalidEnvironment(format!(
                "radiance must be finite and non-negative, found {bad}"
            )));
        }
        let luma = rgb.map(|c| luminance([c[0] as f64, c[1] as f64, c[2] as f64]) as f32);
        Ok(Self { rgb, luma })
    }

    /// Evaluates `f` at every texel center direction.
    pub fn from_fn(height: usize, mut f: impl FnMut(&Vec3) -> [f64; 3]) -> Result<Self, RadianceError> {
        let width = 2 * height;
        let rgb = Grid::from_fn(width, height, |i, j| {
            let c = f(&texel_dir(i, j, width, height));
            [c[0] as f32, c[1] as f32, c[2] as f32]
        });
        Self::new(rgb)
    }

    pub fn constant(height: usize, value: f64) -> Self {
        Self::from_fn(height, |_| [value; 3]).expect("constant map is valid")
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn rgb(&self) -> &Grid<Rgb> {
        &self.rgb
    }

    pub fn luminance(&self) -> &Image {
        &self.luma
    }

    pub fn scaled(&self, s: f64) -> Self {
        let rgb = self.rgb.map(|c| {
            [
                (c[0] as f64 * s) as f32,
                (c[1] as f64 * s) as f32,
                (c[2] as f64 * s) as f32,
            ]
        });
        Self::new(rgb).expect("scaling by a non-negative factor keeps the map valid")
    }

    /// Bilinear luminance along unit direction `dir`.
    #[inline]
    pub fn sample_luminance(&self, dir: &Vec3) -> f64 {
        sample_grid(&self.luma, dir)
    }

    /// Solid-angle weighted mean luminance.
    pub fn mean_luminance(&self) -> f64 {
        weighted_mean(&self.luma)
    }
}

pub fn weighted_mean(grid: &Image) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let mut sum = 0.0;
    let mut area = 0.0;
    for j in 0..h {
        let a = texel_solid_angle(j, w, h);
        for i in 0..w {
            sum += *grid.get(i, j) as f64 * a;
            area += a;
        }
    }
    sum / area
}
