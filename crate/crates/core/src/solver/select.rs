use crate::geometry::Pixel;
use crate::grid::Image;

pub const BLOCK_SIZE: usize = 32;
/// Added to each block's median gradient to form its threshold.
pub const GRADIENT_OFFSET: f64 = 7.0 / 255.0;
/// Pixels this close to the border are never selected.
pub const SELECTION_MARGIN: usize = 4;

fn gradient_magnitude(image: &Image, x: usize, y: usize) -> f64 {
    let g = |x: usize, y: usize| *image.get(x, y) as f64;
    let gx = 0.5 * (g(x + 1, y) - g(x - 1, y));
    let gy = 0.5 * (g(x, y + 1) - g(x, y - 1));
    (gx * gx + gy * gy).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Region-adaptive gradient selection.
///
/// The image is split into square blocks. A pixel is a candidate when its
/// gradient exceeds its block's median gradient plus a fixed offset. Each
/// block first contributes up to an equal share of `target` of its strongest
/// candidates, then the strongest remaining candidates anywhere fill the gap.
/// Returned pixels are in raster order.
pub fn select_pixels(image: &Image, target: usize) -> Vec<Pixel> {
    let (w, h) = (image.width(), image.height());
    let m = SELECTION_MARGIN;
    if w <= 2 * m || h <= 2 * m || target == 0 {
        return Vec::new();
    }
    let bx = w.div_ceil(BLOCK_SIZE);
    let by = h.div_ceil(BLOCK_SIZE);
    let mut candidates: Vec<Vec<(f64, usize, usize)>> = Vec::with_capacity(bx * by);
    for j in 0..by {
        for i in 0..bx {
            let xs = (i * BLOCK_SIZE).max(m)..((i + 1) * BLOCK_SIZE).min(w - m);
            let ys = (j * BLOCK_SIZE).max(m)..((j + 1) * BLOCK_SIZE).min(h - m);
            let mut grads = Vec::new();
            for y in ys.clone() {
                for x in xs.clone() {
                    grads.push((gradient_magnitude(image, x, y), x, y));
                }
            }
            let threshold = median(grads.iter().map(|g| g.0).collect()) + GRADIENT_OFFSET;
            let mut c: Vec<_> = grads.into_iter().filter(|g| g.0 > threshold).collect();
            c.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
            candidates.push(c);
        }
    }
    let quota = target.div_ceil(bx * by);
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for c in candidates {
        let k = quota.min(c.len());
        chosen.extend_from_slice(&c[..k]);
        rest.extend_from_slice(&c[k..]);
    }
    if chosen.len() > target {
        chosen.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        chosen.truncate(target);
    } else if chosen.len() < target {
        rest.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        let need = target - chosen.len();
        chosen.extend(rest.into_iter().take(need));
    }
    let mut px: Vec<(usize, usize)> = chosen.into_iter().map(|(_, x, y)| (y, x)).collect();
    px.sort_unstable();
    px.into_iter().map(|(y, x)| Pixel::new(x as f64, y as f64)).collect()
}
