//! Per-pixel surface normals from depth maps.
//!
//! Each pixel is back-projected together with its 8-connected neighbors that
//! lie within a metric vicinity. Cross products of the point triplets give an
//! initial normal. The final normal is a Gaussian-weighted plane fit (degree-1
//! moving least squares) over all back-projected pixels within the vicinity.

use nalgebra::{Matrix3, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{backproject, Intrinsics, Pixel, Vec3};
use crate::grid::{Grid, Image};

/// Cross products with a smaller norm are treated as collinear.
pub const MIN_CROSS_NORM: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("point triplet is degenerate (|cross| = {0:e})")]
    DegenerateTriplet(f64),
    #[error("depth map is {found_w}x{found_h}, intrinsics expect {want_w}x{want_h}")]
    SizeMismatch {
        found_w: usize,
        found_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Depth in meters along the optical axis. Entries `<= 0` or non-finite are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    grid: Image,
}

impl DepthMap {
    pub fn new(grid: Image, k: &Intrinsics) -> Result<Self, SurfaceError> {
        if grid.width() != k.width || grid.height() != k.height {
            return Err(SurfaceError::SizeMismatch {
                found_w: grid.width(),
                found_h: grid.height(),
                want_w: k.width,
                want_h: k.height,
            });
        }
        Ok(Self { grid })
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn depth(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.grid.get(x, y) as f64;
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    pub fn grid(&self) -> &Image {
        &self.grid
    }

    pub fn into_grid(self) -> Image {
        self.grid
    }

    pub fn valid_count(&self) -> usize {
        self.grid.data().iter().filter(|&&d| d > 0.0 && d.is_finite()).count()
    }

    /// Camera-frame point at pixel `(x, y)`, if the depth is valid.
    #[inline]
    pub fn point(&self, x: usize, y: usize, k: &Intrinsics) -> Option<Vec3> {
        let d = self.depth(x, y)?;
        backproject(Pixel::new(x as f64, y as f64), d, k).ok()
    }
}

/// Camera-frame unit normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    normals: Grid<Vec3>,
    valid: Grid<bool>,
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            normals: Grid::filled(width, height, Vec3::zeros()),
            valid: Grid::filled(width, height, false),
        }
    }

    /// Builds a map from raw vectors; zero-length vectors are marked invalid and
    /// the rest are normalized.
    pub fn from_vectors(vectors: Grid<Vec3>) -> Self {
        let valid = vectors.map(|n| n.norm() > 1e-6 && n.iter().all(|c| c.is_finite()));
        let normals = vectors.map(|n| {
            let len = n.norm();
            if len > 1e-6 {
                n / len
            } else {
                Vec3::zeros()
            }
        });
        Self { normals, valid }
    }

    pub fn width(&self) -> usize {
        self.normals.width()
    }

    pub fn height(&self) -> usize {
        self.normals.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vec3> {
        (*self.valid.get(x, y)).then(|| *self.normals.get(x, y))
    }

    pub fn set(&mut self, x: usize, y: usize, n: Option<Vec3>) {
        match n {
            Some(n) => {
                self.normals.set(x, y, n);
                self.valid.set(x, y, true);
            }
            None => {
                self.normals.set(x, y, Vec3::zeros());
                self.valid.set(x, y, false);
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v).count()
    }

    pub fn vectors(&self) -> &Grid<Vec3> {
        &self.normals
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.valid
    }
}

/// Normal of the triangle `(p, n1, n2)`, flipped to face the camera at the origin.
pub fn triplet_normal(p: &Vec3, n1: &Vec3, n2: &Vec3) -> Result<Vec3, SurfaceError> {
    let c = (p - n1).cross(&(p - n2));
    let len = c.norm();
    if !(len > MIN_CROSS_NORM) {
        return Err(SurfaceError::DegenerateTriplet(len));
    }
    Ok(face_camera(c / len, p))
}

#[inline]
fn face_camera(n: Vec3, p: &Vec3) -> Vec3 {
    if n.dot(p) > 0.0 {
        -n
    } else {
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    /// Metric neighborhood radius, meters.
    pub vicinity: f64,
    /// Gaussian bandwidth of the plane fit, meters.
    pub bandwidth: f64,
    /// Largest pixel half-window searched for the plane fit.
    pub max_window: usize,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            vicinity: 0.02,
            bandwidth: 0.01,
            max_window: 8,
        }
    }
}

/// Neighbor offsets around a pixel in counter-clockwise order (image y down).
const RING: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

fn offset(x: usize, y: usize, dx: i32, dy: i32, w: usize, h: usize) -> Option<(usize, usize)> {
    let nx = x as i64 + dx as i64;
    let ny = y as i64 + dy as i64;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
}

/// Averaged triplet normals over the 8-ring. Pixels with fewer than three
/// neighbors inside the vicinity are invalid.
pub fn triplet_normal_map(depth: &DepthMap, k: &Intrinsics, params: &NormalParams) -> NormalMap {
    let (w, h) = (depth.width(), depth.height());
    let mut out = NormalMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, triplet_at(depth, k, params, x, y));
        }
    }
    out
}

fn triplet_at(depth: &DepthMap, k: &Intrinsics, params: &NormalParams, x: usize, y: usize) -> Option<Vec3> {
    let (w, h) = (depth.width(), depth.height());
    let p = depth.point(x, y, k)?;
    let mut ring = [Vec3::zeros(); 8];
    let mut count = 0;
    for &(dx, dy) in &RING {
        if let Some((nx, ny)) = offset(x, y, dx, dy, w, h) {
            if let Some(q) = depth.point(nx, ny, k) {
                if (q - p).norm() <= params.vicinity {
                    ring[count] = q;
                    count += 1;
                }
            }
        }
    }
    if count < 3 {
        return None;
    }
    let mut sum = Vec3::zeros();
    for i in 0..count {
        for j in i + 1..count {
            if let Ok(n) = triplet_normal(&p, &ring[i], &ring[j]) {
                sum += n;
            }
        }
    }
    let len = sum.norm();
    (len > 1e-9).then(|| sum / len)
}

/// Normal map estimate: triplet normals refined by a weighted plane fit.
pub fn estimate_normal_map(depth: &DepthMap, k: &Intrinsics, params: &NormalParams) -> NormalMap {
    let (w, h) = (depth.width(), depth.height());
    let mut out = NormalMap::invalid(w, h);
    let focal = k.fx.max(k.fy);
    let inv_h2 = 1.0 / (params.bandwidth * params.bandwidth);
    for y in 0..h {
        for x in 0..w {
            let Some(p) = depth.point(x, y, k) else {
                continue;
            };
            let radius = ((params.vicinity * focal / p.z).ceil() as usize).clamp(1, params.max_window.max(1)) as i32;
            let mut neighbors = 0usize;
            let mut wsum = 0.0;
            let mut mean = Vec3::zeros();
            let mut pts: Vec<(Vec3, f64)> = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let Some((nx, ny)) = offset(x, y, dx, dy, w, h) else {
                        continue;
                    };
                    let Some(q) = depth.point(nx, ny, k) else {
                        continue;
                    };
                    let d2 = (q - p).norm_squared();
                    if d2 > params.vicinity * params.vicinity {
                        continue;
                    }
                    if dx != 0 || dy != 0 {
                        neighbors += 1;
                    }
                    let wt = (-d2 * inv_h2).exp();
                    wsum += wt;
                    mean += q * wt;
                    pts.push((q, wt));
                }
            }
            if neighbors < 3 {
                continue;
            }
            mean /= wsum;
            let mut cov = Matrix3::zeros();
            for (q, wt) in &pts {
                let d = q - mean;
                cov += d * d.transpose() * *wt;
            }
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
            // Collinear support leaves the plane orientation undetermined.
            if !(l1 > 1e-6 * eig.eigenvalues[order[2]].max(1e-300)) || l1 <= l0 {
                continue;
            }
            let n: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
            let reference = triplet_at(depth, k, params, x, y);
            let n = match reference {
                Some(r) if n.dot(&r) < 0.0 => -n,
                Some(_) => n,
                None => face_camera(n, &p),
            };
            // Camera-facing is required of every output normal.
            let n = face_camera(n.normalize(), &p);
            out.set(x, y, Some(n));
        }
    }
    out
}

/// Angle between two unit vectors in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
