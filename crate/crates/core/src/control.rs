//! Control points: representative surface positions that carry an
//! environment map. Control points come from SLIC superpixels computed on a
//! normal map; every scene point then uses the environment map of its nearest
//! control point.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{backproject, Intrinsics, Pixel, Pose, Vec3};
use crate::grid::Grid;
use crate::surface::{DepthMap, NormalMap};

pub const DEFAULT_CLUSTERS: usize = 16;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const SLIC_ITERATIONS: usize = 10;
/// Edge length of the voxel grid used to merge per-frame controls, meters.
pub const MERGE_VOXEL: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("normal map has {valid} valid pixels, need at least {needed}")]
    TooFewValidPixels { valid: usize, needed: usize },
    #[error("control point set is empty")]
    EmptyControlSet,
    #[error("segmentation is {seg_w}x{seg_h} but depth map is {depth_w}x{depth_h}")]
    SizeMismatch {
        seg_w: usize,
        seg_h: usize,
        depth_w: usize,
        depth_h: usize,
    },
}

/// Pixel labels in `0..count`. Every pixel carries a label; each label's
/// pixels form one 4-connected region.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    labels: Grid<usize>,
    count: usize,
}

impl Segmentation {
    pub fn labels(&self) -> &Grid<usize> {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        *self.labels.get(x, y)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in self.labels.data() {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy)]
struct Center {
    x: f64,
    y: f64,
    n: Vec3,
}

/// Initial grid of at most `k` centers with cell sizes close to `√(pixels/k)`.
fn center_grid(width: usize, height: usize, k: usize) -> (usize, usize) {
    let s = ((width * height) as f64 / k as f64).sqrt();
    let mut nx = ((width as f64 / s).round() as usize).clamp(1, width);
    let mut ny = ((height as f64 / s).round() as usize).clamp(1, height);
    while nx * ny > k {
        if nx as f64 / width as f64 >= ny as f64 / height as f64 && nx > 1 {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    (nx, ny)
}

fn seed_centers(normals: &NormalMap, k: usize) -> Vec<Center> {
    let (w, h) = (normals.width(), normals.height());
    let (nx, ny) = center_grid(w, h, k);
    let (cw, ch) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x0 = (i as f64 * cw) as usize;
            let x1 = (((i + 1) as f64 * cw) as usize).min(w);
            let y0 = (j as f64 * ch) as usize;
            let y1 = (((j + 1) as f64 * ch) as usize).min(h);
            let cx = (i as f64 + 0.5) * cw - 0.5;
            let cy = (j as f64 + 0.5) * ch - 0.5;
            // Nearest valid pixel of the cell to its geometric center.
            let mut best: Option<(f64, usize, usize)> = None;
            for y in y0..y1 {
                for x in x0..x1 {
                    if normals.get(x, y).is_none() {
                        continue;
                    }
                    let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, x, y));
                    }
                }
            }
            if let Some((_, x, y)) = best {
                centers.push(Center {
                    x: x as f64,
                    y: y as f64,
                    n: normals.get(x, y).expect("valid"),
                });
            }
        }
    }
    centers
}

/// Nearest center in the joint space, searching centers within `radius`
/// pixels on both axes first. Ties go to the lowest index.
fn assign(
    x: usize,
    y: usize,
    n: &Vec3,
    centers: &[Center],
    buckets: &HashMap<(i64, i64), Vec<usize>>,
    radius: f64,
    spatial: f64,
) -> usize {
    let dist = |c: &Center| {
        let dx = c.x - x as f64;
        let dy = c.y - y as f64;
        (c.n - n).norm_squared() + spatial * (dx * dx + dy * dy)
    };
    let (bx, by) = ((x as f64 / radius).floor() as i64, (y as f64 / radius).floor() as i64);
    let mut best: Option<(f64, usize)> = None;
    let mut candidates: Vec<usize> = Vec::new();
    for oy in -1..=1 {
        for ox in -1..=1 {
            if let Some(list) = buckets.get(&(bx + ox, by + oy)) {
                candidates.extend(list);
            }
        }
    }
    candidates.sort_unstable();
    for &ci in &candidates {
        let c = &centers[ci];
        if (c.x - x as f64).abs() > radius || (c.y - y as f64).abs() > radius {
            continue;
        }
        let d = dist(c);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, ci));
        }
    }
    if let Some((_, ci)) = best {
        return ci;
    }
    let mut best = (f64::INFINITY, 0);
    for (ci, c) in centers.iter().enumerate() {
        let d = dist(c);
        if d < best.0 {
            best = (d, ci);
        }
    }
    best.1
}

const NEIGHBORS4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBORS4.iter().filter_map(move |&(dx, dy)| {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
    })
}

/// Keeps the largest 4-connected component of every label and unlabels the rest.
fn keep_largest_components(labels: &mut Grid<Option<usize>>) {
    let (w, h) = (labels.width(), labels.height());
    let mut component = Grid::filled(w, h, usize::MAX);
    let mut comps: Vec<(usize, usize)> = Vec::new(); // (label, size)
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let Some(l) = *labels.get(x, y) else { continue };
            if *component.get(x, y) != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut size = 0;
            component.set(x, y, id);
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                size += 1;
                for (nx, ny) in neighbors4(cx, cy, w, h) {
                    if *labels.get(nx, ny) == Some(l) && *component.get(nx, ny) == usize::MAX {
                        component.set(nx, ny, id);
                        queue.push_back((nx, ny));
                    }
                }
            }
            comps.push((l, size));
        }
    }
    let mut largest: HashMap<usize, (usize, usize)> = HashMap::new();
    for (id, &(l, size)) in comps.iter().enumerate() {
        let e = largest.entry(l).or_insert((id, size));
        if size > e.1 {
            *e = (id, size);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let c = *component.get(x, y);
            if c != usize::MAX && largest[&comps[c].0].0 != c {
                labels.set(x, y, None);
            }
        }
    }
}

/// Breadth-first growth of labeled regions into unlabeled pixels. Growing
/// along 4-neighbors keeps each region connected.
fn flood_unlabeled(labels: &mut Grid<Option<usize>>) {
    let (w, h) = (labels.width(), labels.height());
    let mut queue: VecDeque<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| labels.get(x, y).is_some())
        .collect();
    while let Some((x, y)) = queue.pop_front() {
        let l = *labels.get(x, y);
        for (nx, ny) in neighbors4(x, y, w, h) {
            if labels.get(nx, ny).is_none() {
                labels.set(nx, ny, l);
                queue.push_back((nx, ny));
            }
        }
    }
}

/// SLIC superpixels on a normal map.
///
/// Distance between a pixel and a center is `‖n − n_c‖² + (m/S)²‖xy − xy_c‖²`
/// with grid interval `S = √(pixels/k)`. After the k-means iterations each
/// label keeps its largest connected piece and the remaining pixels
/// (including those without a valid normal) join the adjacent regions.
pub fn slic_on_normals(normals: &NormalMap, k: usize, compactness: f64) -> Result<Segmentation, ControlError> {
    let (w, h) = (normals.width(), normals.height());
    let valid = normals.valid_count();
    let k = k.max(1);
    if valid < k {
        return Err(ControlError::TooFewValidPixels { valid, needed: k });
    }
    let s = ((w * h) as f64 / k as f64).sqrt();
    let spatial = (compactness / s).powi(2);
    let radius = s.max(1.0);
    let mut centers = seed_centers(normals, k);
    let mut labels: Vec<Option<usize>> = vec![None; w * h];

    for _ in 0..SLIC_ITERATIONS {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (ci, c) in centers.iter().enumerate() {
            buckets
                .entry(((c.x / radius).floor() as i64, (c.y / radius).floor() as i64))
                .or_default()
                .push(ci);
        }
        labels = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let centers = &centers;
                let buckets = &buckets;
                (0..w).map(move |x| {
                    normals
                        .get(x, y)
                        .map(|n| assign(x, y, &n, centers, buckets, radius, spatial))
                })
            })
            .collect();

        let mut sums = vec![(0.0, 0.0, Vec3::zeros(), 0usize); centers.len()];
        for (idx, l) in labels.iter().enumerate() {
            if let Some(l) = *l {
                let (x, y) = (idx % w, idx / w);
                let e = &mut sums[l];
                e.0 += x as f64;
                e.1 += y as f64;
                e.2 += normals.get(x, y).expect("labeled pixels are valid");
                e.3 += 1;
            }
        }
        for (c, (sx, sy, sn, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                let inv = 1.0 / cnt as f64;
                *c = Center {
                    x: sx * inv,
                    y: sy * inv,
                    n: sn * inv,
                };
            }
        }
    }

    let mut grid = Grid::from_vec(w, h, labels).expect("sized");
    keep_largest_components(&mut grid);
    flood_unlabeled(&mut grid);

    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut out = Vec::with_capacity(w * h);
    for l in grid.data() {
        let l = l.expect("flood covers every pixel");
        let next = remap.len();
        out.push(*remap.entry(l).or_insert(next));
    }
    Ok(Segmentation {
        count: remap.len(),
        labels: Grid::from_vec(w, h, out).expect("sized"),
    })
}

/// A world-frame position whose illumination is described by environment map
/// `envmap_id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub position: Vec3,
    pub envmap_id: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One control per cluster: the centroid of the cluster's valid-depth pixels,
/// back-projected at their median depth and moved to the world frame by the
/// world-from-camera `pose`. Returns the controls and the number of clusters
/// dropped for lack of valid depth.
pub fn make_control_points(
    seg: &Segmentation,
    depth: &DepthMap,
    pose: &Pose,
    k: &Intrinsics,
) -> Result<(Vec<ControlPoint>, usize), ControlError> {
    let labels = seg.labels();
    if labels.width() != depth.width() || labels.height() != depth.height() {
        return Err(ControlError::SizeMismatch {
            seg_w: labels.width(),
            seg_h: labels.height(),
            depth_w: depth.width(),
            depth_h: depth.height(),
        });
    }
    let mut acc: Vec<(f64, f64, Vec<f64>)> = vec![(0.0, 0.0, Vec::new()); seg.count()];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            if let Some(d) = depth.depth(x, y) {
                let e = &mut acc[*labels.get(x, y)];
                e.0 += x as f64;
                e.1 += y as f64;
                e.2.push(d);
            }
        }
    }
    let mut controls = Vec::new();
    let mut dropped = 0;
    for (sx, sy, mut depths) in acc {
        if depths.is_empty() {
            dropped += 1;
            continue;
        }
        let n = depths.len() as f64;
        let centroid = Pixel::new(sx / n, sy / n);
        let d = median(&mut depths);
        let cam = backproject(centroid, d, k).expect("median of positive depths is positive");
        controls.push(ControlPoint {
            position: pose.transform_point(&cam),
            envmap_id: controls.len(),
        });
    }
    Ok((controls, dropped))
}

/// Index of the Euclidean-nearest control; ties go to the lowest index.
pub fn nearest_control(p: &Vec3, controls: &[ControlPoint]) -> Result<usize, ControlError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in controls.iter().enumerate() {
        let d = (c.position - p).norm_squared();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i).ok_or(ControlError::EmptyControlSet)
}

/// Concatenates per-frame control sets, keeping the first control that falls
/// in each `voxel`-sized cell. Environment ids are renumbered `0..n`.
pub fn merge_control_points(sets: &[Vec<ControlPoint>], voxel: f64) -> Vec<ControlPoint> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for c in sets.iter().flatten() {
        let key = (
            (c.position.x / voxel).floor() as i64,
            (c.position.y / voxel).floor() as i64,
            (c.position.z / voxel).floor() as i64,
        );
        if seen.insert(key) {
            out.push(ControlPoint {
                position: c.position,
                envmap_id: out.len(),
            });
        }
    }
    out
}
