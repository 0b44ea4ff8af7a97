//! Absolute trajectory error after rigid alignment.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::trajectory::Trajectory;

/// Largest timestamp difference for two poses to be associated, seconds.
pub const ASSOCIATION_WINDOW: f64 = 0.02;
/// Ratio of the second to the first singular value below which the estimated
/// positions count as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("only {0} associated poses, need at least 3")]
    TooFewCorrespondences(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    /// Maps estimated positions onto ground truth.
    pub transform: Pose,
    pub pairs: usize,
    /// Estimated positions are collinear, so rotation about their line is arbitrary.
    pub degenerate: bool,
}

/// Index pairs `(est, gt)` with timestamps within [`ASSOCIATION_WINDOW`].
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(usize, usize)> {
    let stamps: Vec<f64> = gt.frames().iter().map(|f| f.timestamp).collect();
    let mut pairs = Vec::new();
    for (i, f) in est.frames().iter().enumerate() {
        let at = stamps.partition_point(|&s| s < f.timestamp);
        let best = [at.checked_sub(1), (at < stamps.len()).then_some(at)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (stamps[a] - f.timestamp)
                    .abs()
                    .total_cmp(&(stamps[b] - f.timestamp).abs())
            });
        if let Some(j) = best {
            if (stamps[j] - f.timestamp).abs() <= ASSOCIATION_WINDOW {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Closed-form rigid transform (no scale) minimizing `Σ‖T·p_est − p_gt‖²`
/// over associated camera positions.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory) -> Result<Alignment, EvalError> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(EvalError::TooFewCorrespondences(pairs.len()));
    }
    let n = pairs.len() as f64;
    let e: Vec<Vec3> = pairs.iter().map(|&(i, _)| est.pose(i).translation).collect();
    let g: Vec<Vec3> = pairs.iter().map(|&(_, j)| gt.pose(j).translation).collect();
    let mu_e = e.iter().sum::<Vec3>() / n;
    let mu_g = g.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for (a, b) in e.iter().zip(&g) {
        cov += (b - mu_g) * (a - mu_e).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = mu_g - rot * mu_e;

    let mut spread = Matrix3::zeros();
    for a in &e {
        spread += (a - mu_e) * (a - mu_e).transpose();
    }
    let mut sv = spread.symmetric_eigenvalues().map(|x| x.max(0.0).sqrt());
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    let degenerate = !(sv[1] > COLLINEAR_RATIO * sv[0]);
    Ok(Alignment {
        transform: Pose::new(rot, t),
        pairs: pairs.len(),
        degenerate,
    })
}

/// Per-pair aligned estimate, ground truth and error, in association order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPosition {
    pub timestamp: f64,
    pub estimate: Vec3,
    pub truth: Vec3,
    pub error: f64,
}

pub fn aligned_positions(est: &Trajectory, gt: &Trajectory) -> Result<(Alignment, Vec<AlignedPosition>), EvalError> {
    let align = umeyama_align(est, gt)?;
    let rows = associate(est, gt)
        .into_iter()
        .map(|(i, j)| {
            let estimate = align.transform.transform_point(&est.pose(i).translation);
            let truth = gt.pose(j).translation;
            AlignedPosition {
                timestamp: gt.frames()[j].timestamp,
                estimate,
                truth,
                error: (estimate - truth).norm(),
            }
        })
        .collect();
    Ok((align, rows))
}

/// Root-mean-square translation error after [`umeyama_align`], meters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let (_, rows) = aligned_positions(est, gt)?;
    let sq: f64 = rows.iter().map(|r| r.error * r.error).sum();
    Ok((sq / rows.len() as f64).sqrt())
}
