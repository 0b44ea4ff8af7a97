//! Dataset-level solving: build a problem from a dataset, refine, and write
//! the results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::dataset::{frame_stem, Dataset};
use crate::grid::Image;
use crate::radiance::{BrdfTable, RadianceContext};
use crate::solver::{build_problem, optimize, BuildStats, FrameInput, Problem, SolveReport, SolverConfig, SolverError};
use crate::surface::{DepthMap, NormalMap};
use crate::trajectory::{Stamped, Trajectory};

pub const REFINED_FILE: &str = "refined.txt";
pub const REPORT_FILE: &str = "report.txt";

/// Process-wide split-sum albedo table, built on first use.
pub fn shared_brdf_table() -> Arc<BrdfTable> {
    static TABLE: OnceLock<Arc<BrdfTable>> = OnceLock::new();
    TABLE.get_or_init(|| Arc::new(BrdfTable::default_table())).clone()
}

/// Prefiltered illumination for every control of `dataset`.
pub fn radiance_context(dataset: &Dataset) -> Arc<RadianceContext> {
    Arc::new(RadianceContext::from_environments(
        &dataset.envmaps,
        shared_brdf_table(),
    ))
}

/// Solver inputs for every frame, posed by `poses`.
pub fn frame_inputs(dataset: &Dataset, poses: &Trajectory) -> Result<Vec<FrameInput>, SolverError> {
    if poses.len() != dataset.frames.len() {
        return Err(SolverError::InvalidProblem(format!(
            "{} poses for {} frames",
            poses.len(),
            dataset.frames.len()
        )));
    }
    let k = &dataset.intrinsics;
    dataset
        .frames
        .iter()
        .zip(poses.frames())
        .map(|(f, s)| {
            let depth = DepthMap::new(f.depth.clone(), k).map_err(|e| SolverError::InvalidProblem(e.to_string()))?;
            Ok(FrameInput {
                image: f.image.clone(),
                depth,
                roughness: f.roughness.clone(),
                normals: f.normals.clone().map(NormalMap::from_vectors),
                pose: s.pose,
                timestamp: s.timestamp,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub refined: Trajectory,
    pub report: SolveReport,
    pub stats: BuildStats,
    pub problem: Problem,
}

/// Selects points at the initial poses and refines them.
pub fn solve_dataset(
    dataset: &Dataset,
    initial: &Trajectory,
    ctx: Arc<RadianceContext>,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    cfg.validate()?;
    let inputs = frame_inputs(dataset, initial)?;
    let (mut problem, stats) = build_problem(inputs, dataset.intrinsics, ctx, dataset.controls.clone(), cfg)?;
    let report = optimize(&mut problem, cfg)?;
    let refined = Trajectory::from_frames(
        problem
            .frames
            .iter()
            .map(|f| Stamped {
                timestamp: f.timestamp,
                pose: f.pose,
            })
            .collect(),
    )
    .expect("timestamps come from a valid trajectory");
    Ok(Solution {
        refined,
        report,
        stats,
        problem,
    })
}

/// Mean frozen weight of each point's observations, written at its host
/// pixel; zero elsewhere. One image per frame.
pub fn weight_images(solution: &Solution) -> Vec<Image> {
    let p = &solution.problem;
    let k = &p.intrinsics;
    let mut images = vec![Image::filled(k.width, k.height, 0.0); p.frames.len()];
    for (point, w) in p.points.iter().zip(&solution.report.weights) {
        if w.is_empty() {
            continue;
        }
        let mean = w.iter().map(|o| o.1).sum::<f64>() / w.len() as f64;
        images[point.host].set(point.pixel.u as usize, point.pixel.v as usize, mean as f32);
    }
    images
}

/// Report text with point-building statistics appended.
pub fn report_text(solution: &Solution) -> String {
    let mut s = solution.report.to_text();
    let st = &solution.stats;
    let _ = writeln!(s, "build.selected = {}", st.selected);
    let _ = writeln!(s, "build.without_depth = {}", st.without_depth);
    let _ = writeln!(s, "build.without_normal = {}", st.without_normal);
    let _ = writeln!(s, "build.unobserved = {}", st.unobserved);
    s
}

/// Writes `refined.txt`, `report.txt` and, if asked, `weights_NNNNNN.pfm`.
pub fn write_solution(out: &Path, solution: &Solution, weights: bool) -> std::io::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(REFINED_FILE), solution.refined.to_text())?;
    fs::write(out.join(REPORT_FILE), report_text(solution))?;
    if weights {
        for (i, img) in weight_images(solution).iter().enumerate() {
            crate::pfm::write_gray(&out.join(format!("weights_{}.pfm", frame_stem(i))), img)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
    }
    Ok(())
}
