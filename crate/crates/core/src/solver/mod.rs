//! Weighted photometric bundle adjustment over camera poses and point inverse
//! depths.

mod config;
mod optimize;
mod problem;
mod select;
mod weights;

pub use config::{LmConfig, PointConfig, SolverConfig, WeightMode, CONFIG_KEYS};
pub use optimize::{optimize, OuterIteration, SolveReport, GAUGE_FRAME, MAX_LAMBDA};
pub use problem::{
    build_problem, linearize_patch, patch_residuals, point_weight, BuildStats, FrameInput, FrameState,
    ObservationJacobian, PoseJacobian, Problem, Residuals, ScenePoint, PATTERN, PATTERN_LEN,
};
pub use select::{select_pixels, BLOCK_SIZE, GRADIENT_OFFSET, SELECTION_MARGIN};
pub use weights::{huber_cost, huber_weight, mad_scale, pb_weight, tdist_weight};

use thiserror::Error;

use crate::control::ControlError;
use crate::geometry::GeometryError;
use crate::kv::KvError;
use crate::radiance::RadianceError;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("normal equations are singular: {0}")]
    SingularNormalEquations(String),
    #[error("loss diverged in outer iteration {outer} (loss {loss})")]
    Diverged { outer: usize, loss: f64 },
    #[error("residual scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("need at least 6 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(GeometryError),
    #[error(transparent)]
    Radiance(#[from] RadianceError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Config(#[from] KvError),
}
