use std::path::Path;

use rayon::prelude::*;

use crate::geometry::Vec3;
use crate::grid::{Grid, Image};
use crate::pfm::{self, PfmError};

use super::microfacet::{alpha, hammersley, sample_ggx_half, sampled_weight};

pub const DEFAULT_TABLE_SIZE: usize = 64;
pub const DEFAULT_TABLE_SAMPLES: u32 = 4096;

/// Smallest `n·v` used when tabulating; the integrand vanishes at grazing view.
const MIN_COS_VIEW: f64 = 1e-3;

/// Directional albedo of the specular lobe, `∫ cosθ_l f(l, v) dl`, tabulated
/// over `(n·v, r_s)` on a regular node grid covering `[0, 1]²`.
///
/// Column `i` holds `n·v = i / (cols − 1)`, row `j` holds `r_s = j / (rows − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfTable {
    grid: Image,
}

/// Quasi-Monte-Carlo estimate of one table entry.
pub fn directional_albedo(cos_view: f64, roughness: f64, samples: u32) -> f64 {
    let nv = cos_view.clamp(MIN_COS_VIEW, 1.0);
    let v = Vec3::new((1.0 - nv * nv).sqrt(), 0.0, nv);
    let a = alpha(roughness);
    let mut acc = 0.0;
    for i in 0..samples {
        let h = sample_ggx_half(hammersley(i, samples), a);
        let vh = v.dot(&h);
        let l = h * (2.0 * vh) - v;
        acc += sampled_weight(nv, l.z, h.z, vh, a);
    }
    acc / samples as f64
}

impl BrdfTable {
    pub fn build(cols: usize, rows: usize, samples: u32) -> Self {
        assert!(cols >= 2 && rows >= 2, "table needs at least 2x2 entries");
        let data: Vec<f32> = (0..rows)
            .into_par_iter()
            .flat_map_iter(|j| {
                let r = j as f64 / (rows - 1) as f64;
                (0..cols).map(move |i| directional_albedo(i as f64 / (cols - 1) as f64, r, samples) as f32)
            })
            .collect();
        Self {
            grid: Grid::from_vec(cols, rows, data).expect("sized"),
        }
    }

    pub fn default_table() -> Self {
        Self::build(DEFAULT_TABLE_SIZE, DEFAULT_TABLE_SIZE, DEFAULT_TABLE_SAMPLES)
    }

    pub fn from_grid(grid: Image) -> Option<Self> {
        (grid.width() >= 2 && grid.height() >= 2).then_some(Self { grid })
    }

    pub fn grid(&self) -> &Image {
        &self.grid
    }

    /// Bilinear lookup; arguments are clamped to `[0, 1]`.
    pub fn lookup(&self, cos_view: f64, roughness: f64) -> f64 {
        let (w, h) = (self.grid.width(), self.grid.height());
        let x = cos_view.clamp(0.0, 1.0) * (w - 1) as f64;
        let y = roughness.clamp(0.0, 1.0) * (h - 1) as f64;
        let x0 = (x.floor() as usize).min(w - 2);
        let y0 = (y.floor() as usize).min(h - 2);
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let g = |i, j| *self.grid.get(i, j) as f64;
        let top = g(x0, y0) + tx * (g(x0 + 1, y0) - g(x0, y0));
        let bottom = g(x0, y0 + 1) + tx * (g(x0 + 1, y0 + 1) - g(x0, y0 + 1));
        top + ty * (bottom - top)
    }

    pub fn save(&self, path: &Path) -> Result<(), PfmError> {
        pfm::write_gray(path, &self.grid)
    }

    pub fn load(path: &Path) -> Result<Self, PfmError> {
        Self::from_grid(pfm::read_gray(path)?).ok_or_else(|| PfmError::BadHeader("table smaller than 2x2".into()))
    }
}
