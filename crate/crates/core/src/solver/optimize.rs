use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;

use crate::geometry::{GeometryError, Pose, Twist};

use super::config::{SolverConfig, WeightMode};
use super::problem::{linearize_patch, patch_residuals, point_weight, Problem, PATTERN_LEN};
use super::weights::{huber_cost, huber_weight, mad_scale, tdist_weight};
use super::SolverError;

/// Damping beyond which the inner loop gives up on finding a decrease.
pub const MAX_LAMBDA: f64 = 1e10;
/// The gauge frame keeps its pose.
pub const GAUGE_FRAME: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct OuterIteration {
    pub loss_start: f64,
    pub loss_end: f64,
    pub inner_iterations: usize,
    pub accepted_steps: usize,
    pub active_observations: usize,
    pub dropped_observations: usize,
    pub mean_weight: f64,
    pub lambda: f64,
}

impl OuterIteration {
    pub fn relative_decrease(&self) -> f64 {
        if self.loss_start > 0.0 {
            (self.loss_start - self.loss_end) / self.loss_start
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub weight_mode: WeightMode,
    pub theta: f64,
    pub frames: usize,
    pub points: usize,
    pub observations: usize,
    pub outer: Vec<OuterIteration>,
    pub converged: bool,
    pub final_loss: f64,
    /// Frozen weight of every observation in the last outer iteration, as
    /// `(target, weight)` per point; dropped observations are absent.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl SolveReport {
    /// Plain `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "weight_mode = {}", self.weight_mode);
        let _ = writeln!(s, "theta = {}", self.theta);
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "observations = {}", self.observations);
        let _ = writeln!(s, "outer_iterations = {}", self.outer.len());
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "final_loss = {:e}", self.final_loss);
        for (i, o) in self.outer.iter().enumerate() {
            let _ = writeln!(s, "outer.{i}.loss_start = {:e}", o.loss_start);
            let _ = writeln!(s, "outer.{i}.loss_end = {:e}", o.loss_end);
            let _ = writeln!(s, "outer.{i}.relative_decrease = {:e}", o.relative_decrease());
            let _ = writeln!(s, "outer.{i}.inner_iterations = {}", o.inner_iterations);
            let _ = writeln!(s, "outer.{i}.accepted_steps = {}", o.accepted_steps);
            let _ = writeln!(s, "outer.{i}.active_observations = {}", o.active_observations);
            let _ = writeln!(s, "outer.{i}.dropped_observations = {}", o.dropped_observations);
            let _ = writeln!(s, "outer.{i}.mean_weight = {}", o.mean_weight);
            let _ = writeln!(s, "outer.{i}.lambda = {:e}", o.lambda);
        }
        s
    }
}

#[derive(Clone)]
struct State {
    poses: Vec<Pose>,
    inv_depths: Vec<f64>,
}

/// Observations kept in one outer iteration, with their frozen weights.
type Active = Vec<Vec<(usize, f64)>>;

fn block(frame: usize) -> Option<usize> {
    (frame != GAUGE_FRAME).then(|| frame - 1)
}

/// Normal-equation terms contributed by one point.
#[derive(Default)]
struct PointSystem {
    hpp: f64,
    bp: f64,
    /// Pose-block / inverse-depth coupling, one entry per distinct block.
    coupling: Vec<(usize, Vector6<f64>)>,
    /// Pose-pose blocks `(a, b, H_ab)`.
    blocks: Vec<(usize, usize, Matrix6<f64>)>,
    grads: Vec<(usize, Vector6<f64>)>,
}

impl PointSystem {
    fn couple(&mut self, b: usize, v: Vector6<f64>) {
        match self.coupling.iter_mut().find(|(k, _)| *k == b) {
            Some(e) => e.1 += v,
            None => self.coupling.push((b, v)),
        }
    }
}

fn penalty(delta: f64) -> f64 {
    PATTERN_LEN as f64 * huber_cost(1.0, delta)
}

fn linearize_point(problem: &Problem, state: &State, pi: usize, active: &[(usize, f64)], huber: f64) -> PointSystem {
    let point = &problem.points[pi];
    let h = point.host;
    let mut sys = PointSystem::default();
    for &(t, w) in active {
        let Ok(j) = linearize_patch(
            &problem.frames[h].image,
            &problem.frames[t].image,
            point.pixel,
            state.inv_depths[pi],
            &state.poses[h],
            &state.poses[t],
            &problem.intrinsics,
        ) else {
            continue;
        };
        let wr = j.residuals.map(|r| w * huber_weight(r, huber));
        let wjh = j.d_host.map_with_location(|i, _, v| v * wr[i]);
        let wjt = j.d_target.map_with_location(|i, _, v| v * wr[i]);
        let wjr = j.d_inv_depth.component_mul(&wr);
        sys.hpp += wjr.dot(&j.d_inv_depth);
        sys.bp += wjr.dot(&j.residuals);
        if let Some(hb) = block(h) {
            sys.blocks.push((hb, hb, wjh.transpose() * j.d_host));
            sys.grads.push((hb, wjh.transpose() * j.residuals));
            sys.couple(hb, wjh.transpose() * j.d_inv_depth);
        }
        if let Some(tb) = block(t) {
            sys.blocks.push((tb, tb, wjt.transpose() * j.d_target));
            sys.grads.push((tb, wjt.transpose() * j.residuals));
            sys.couple(tb, wjt.transpose() * j.d_inv_depth);
        }
        if let (Some(hb), Some(tb)) = (block(h), block(t)) {
            sys.blocks.push((hb, tb, wjh.transpose() * j.d_target));
        }
    }
    sys.coupling.sort_by_key(|(b, _)| *b);
    sys
}

fn point_loss(problem: &Problem, state: &State, pi: usize, active: &[(usize, f64)], huber: f64) -> f64 {
    let point = &problem.points[pi];
    let h = point.host;
    let mut loss = 0.0;
    for &(t, w) in active {
        let rel = crate::geometry::relative_pose(&state.poses[t], &state.poses[h]);
        let cost = match patch_residuals(
            &problem.frames[h].image,
            &problem.frames[t].image,
            point.pixel,
            state.inv_depths[pi],
            &rel,
            &problem.intrinsics,
        ) {
            Ok(r) => r.iter().map(|v| huber_cost(*v, huber)).sum(),
            Err(_) => penalty(huber),
        };
        loss += w * cost;
    }
    loss
}

fn total_loss(problem: &Problem, state: &State, active: &Active, cfg: &SolverConfig) -> f64 {
    let per_point = |pi: usize| point_loss(problem, state, pi, &active[pi], cfg.huber_delta);
    if cfg.deterministic {
        let losses: Vec<f64> = (0..active.len()).into_par_iter().map(per_point).collect();
        losses.iter().sum()
    } else {
        (0..active.len()).into_par_iter().map(per_point).sum()
    }
}

struct NormalEquations {
    /// Pose-pose blocks with damped diagonals and the Schur complement applied.
    h: DMatrix<f64>,
    b: DVector<f64>,
    points: Vec<PointSystem>,
}

fn add_point(h: &mut DMatrix<f64>, b: &mut DVector<f64>, sys: &PointSystem) {
    for (a, c, m) in &sys.blocks {
        let mut view = h.fixed_view_mut::<6, 6>(6 * a, 6 * c);
        view += m;
        if a != c {
            let mut sym = h.fixed_view_mut::<6, 6>(6 * c, 6 * a);
            sym += m.transpose();
        }
    }
    for (a, g) in &sys.grads {
        let mut view = b.fixed_rows_mut::<6>(6 * a);
        view += g;
    }
}

fn assemble(problem: &Problem, state: &State, active: &Active, cfg: &SolverConfig, lambda: f64) -> NormalEquations {
    let n = 6 * (problem.frames.len() - 1);
    let points: Vec<PointSystem> = (0..active.len())
        .into_par_iter()
        .map(|pi| linearize_point(problem, state, pi, &active[pi], cfg.huber_delta))
        .collect();
    let (mut h, mut b) = if cfg.deterministic {
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for sys in &points {
            add_point(&mut h, &mut b, sys);
        }
        (h, b)
    } else {
        points
            .par_iter()
            .fold(
                || (DMatrix::zeros(n, n), DVector::zeros(n)),
                |(mut h, mut b), sys| {
                    add_point(&mut h, &mut b, sys);
                    (h, b)
                },
            )
            .reduce(
                || (DMatrix::zeros(n, n), DVector::zeros(n)),
                |(h1, b1), (h2, b2)| (h1 + h2, b1 + b2),
            )
    };
    for i in 0..n {
        h[(i, i)] *= 1.0 + lambda;
    }
    for sys in &points {
        if !(sys.hpp > 0.0) {
            continue;
        }
        let hpp = sys.hpp * (1.0 + lambda);
        for (a, ca) in &sys.coupling {
            let mut rows = b.fixed_rows_mut::<6>(6 * a);
            rows -= ca * (sys.bp / hpp);
            for (c, cc) in &sys.coupling {
                let mut view = h.fixed_view_mut::<6, 6>(6 * a, 6 * c);
                view -= ca * cc.transpose() / hpp;
            }
        }
    }
    NormalEquations { h, b, points }
}

/// Solves the damped system and returns the updated state.
fn step(problem: &Problem, state: &State, eq: &NormalEquations, lambda: f64) -> Result<State, SolverError> {
    let dx = match eq.h.clone().cholesky() {
        Some(ch) => -ch.solve(&eq.b),
        None => {
            let unobserved: Vec<usize> = (0..problem.frames.len() - 1)
                .filter(|&a| (0..6).all(|i| eq.h[(6 * a + i, 6 * a + i)] == 0.0))
                .map(|a| a + 1)
                .collect();
            return Err(SolverError::SingularNormalEquations(if unobserved.is_empty() {
                format!("reduced pose system ({} unknowns) is not positive definite", eq.b.len())
            } else {
                format!("frames without observations: {unobserved:?}")
            }));
        }
    };
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::SingularNormalEquations("non-finite pose update".into()));
    }
    let mut next = state.clone();
    for f in 0..problem.frames.len() {
        if let Some(a) = block(f) {
            let xi = Twist::from_iterator(dx.fixed_rows::<6>(6 * a).iter().copied());
            next.poses[f] = state.poses[f].compose(&Pose::exp(&xi));
        }
    }
    for (pi, sys) in eq.points.iter().enumerate() {
        if !(sys.hpp > 0.0) {
            continue;
        }
        let hpp = sys.hpp * (1.0 + lambda);
        let coupled: f64 = sys
            .coupling
            .iter()
            .map(|(a, c)| c.dot(&dx.fixed_rows::<6>(6 * a)))
            .sum();
        let d = -(sys.bp + coupled) / hpp;
        let candidate = state.inv_depths[pi] + d;
        if candidate > 0.0 && candidate.is_finite() {
            next.inv_depths[pi] = candidate;
        }
    }
    Ok(next)
}

/// Target, weight (or the reason it is unavailable) and residual norm of one observation.
type Candidate = (usize, Result<f64, SolverError>, f64);

/// Freezes observation weights at `state`. Observations that cannot be
/// evaluated are dropped for this outer iteration.
fn freeze_weights(problem: &Problem, state: &State, cfg: &SolverConfig) -> Result<(Active, usize), SolverError> {
    let k = &problem.intrinsics;
    let per_point: Vec<Vec<Candidate>> = problem
        .points
        .par_iter()
        .enumerate()
        .map(|(pi, p)| {
            let host = &state.poses[p.host];
            p.obs
                .iter()
                .filter_map(|&t| {
                    let rel = crate::geometry::relative_pose(&state.poses[t], host);
                    let r = patch_residuals(
                        &problem.frames[p.host].image,
                        &problem.frames[t].image,
                        p.pixel,
                        state.inv_depths[pi],
                        &rel,
                        k,
                    )
                    .ok()?;
                    let w = match cfg.weight_mode {
                        WeightMode::PhysicallyBased => point_weight(
                            p,
                            host,
                            &state.poses[t],
                            state.inv_depths[pi],
                            k,
                            &problem.radiance,
                            cfg.theta,
                        ),
                        _ => Ok(1.0),
                    };
                    Some((t, w, r.norm()))
                })
                .collect()
        })
        .collect();

    let total: usize = problem.points.iter().map(|p| p.obs.len()).sum();
    let kept: usize = per_point.iter().map(Vec::len).sum();
    let sigma = if cfg.weight_mode == WeightMode::TDist {
        let norms: Vec<f64> = per_point.iter().flatten().map(|o| o.2).collect();
        mad_scale(&norms)
    } else {
        0.0
    };
    let mut active = Vec::with_capacity(per_point.len());
    for obs in per_point {
        let mut row = Vec::with_capacity(obs.len());
        for (t, w, norm) in obs {
            let w = match cfg.weight_mode {
                WeightMode::TDist if sigma > 0.0 => tdist_weight(norm, cfg.tdist_nu, sigma)?,
                _ => w?,
            };
            row.push((t, w));
        }
        active.push(row);
    }
    Ok((active, total - kept))
}

/// Iteratively reweighted Levenberg–Marquardt over all non-gauge poses and all
/// inverse depths. Weights are frozen at the start of every outer iteration;
/// the outer loop stops once an iteration lowers the loss by less than
/// `stop_rel` relative. The problem is updated in place.
pub fn optimize(problem: &mut Problem, cfg: &SolverConfig) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    if problem.frames.len() < 2 {
        return Err(SolverError::TooFewFrames(problem.frames.len()));
    }
    if problem.points.len() < 6 {
        return Err(SolverError::TooFewPoints(problem.points.len()));
    }
    for p in &problem.points {
        if p.host >= problem.frames.len() || p.obs.iter().any(|&t| t >= problem.frames.len()) {
            return Err(SolverError::InvalidProblem(
                "observation refers to a missing frame".into(),
            ));
        }
        if problem.radiance.env(p.control_idx).is_none() {
            return Err(SolverError::InvalidProblem(format!(
                "control {} has no environment",
                p.control_idx
            )));
        }
    }
    let mut state = State {
        poses: problem.poses(),
        inv_depths: problem.inv_depths(),
    };
    let mut outer = Vec::new();
    let mut converged = false;
    let mut weights = Vec::new();
    let mut final_loss = f64::NAN;

    for it in 0..cfg.lm.max_outer {
        let (active, dropped) = freeze_weights(problem, &state, cfg)?;
        let count: usize = active.iter().map(Vec::len).sum();
        let mean_weight = if count > 0 {
            active.iter().flatten().map(|o| o.1).sum::<f64>() / count as f64
        } else {
            0.0
        };
        let loss_start = total_loss(problem, &state, &active, cfg);
        let mut loss = loss_start;
        let mut lambda = cfg.lm.lambda_init;
        let mut inner = 0;
        let mut accepted = 0;
        while inner < cfg.lm.max_inner {
            inner += 1;
            let eq = assemble(problem, &state, &active, cfg, lambda);
            let candidate = step(problem, &state, &eq, lambda)?;
            let new_loss = total_loss(problem, &candidate, &active, cfg);
            if new_loss < loss {
                let rel = (loss - new_loss) / loss;
                state = candidate;
                loss = new_loss;
                accepted += 1;
                lambda *= cfg.lm.lambda_down;
                if rel < cfg.lm.stop_rel {
                    break;
                }
            } else {
                lambda *= cfg.lm.lambda_up;
                if lambda > MAX_LAMBDA {
                    break;
                }
            }
        }
        if !loss.is_finite() || loss > loss_start {
            return Err(SolverError::Diverged { outer: it, loss });
        }
        let record = OuterIteration {
            loss_start,
            loss_end: loss,
            inner_iterations: inner,
            accepted_steps: accepted,
            active_observations: count,
            dropped_observations: dropped,
            mean_weight,
            lambda,
        };
        let rel = record.relative_decrease();
        outer.push(record);
        weights = active;
        final_loss = loss;
        if rel < cfg.lm.stop_rel {
            converged = true;
            break;
        }
    }

    for (f, pose) in state.poses.iter().enumerate() {
        if f != GAUGE_FRAME {
            problem.frames[f].pose = *pose;
        }
    }
    for (p, d) in problem.points.iter_mut().zip(&state.inv_depths) {
        p.inv_depth = *d;
    }
    Ok(SolveReport {
        weight_mode: cfg.weight_mode,
        theta: cfg.theta,
        frames: problem.frames.len(),
        points: problem.points.len(),
        observations: problem.observation_count(),
        outer,
        converged,
        final_loss,
        weights,
    })
}

impl From<GeometryError> for SolverError {
    fn from(e: GeometryError) -> Self {
        SolverError::Geometry(e)
    }
}
