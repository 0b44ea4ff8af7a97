//! Physically-based photometric bundle adjustment.

// Comparisons of the form `!(x > y)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod kv;
pub mod pfm;
pub mod pipeline;
pub mod radiance;
pub mod scenegen;
pub mod solver;
pub mod surface;
pub mod trajectory;
