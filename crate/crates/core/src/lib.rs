//! Multi-view stereo depth estimation by generalized binary search over
//! depth bins.
//!
//! The pipeline runs coarse to fine: handcrafted features are extracted per
//! pyramid level, a group-wise correlation cost volume is built for the
//! centers of the current depth bins, a small regularizer head turns it into
//! per-pixel bin probabilities, and the selected bin is subdivided (padded
//! with error tolerance bins) for the next stage. Per-view depth maps are
//! then filtered and fused into a point cloud.

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod costvol;
pub mod error;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod io;
pub mod scene;
pub mod search;
pub mod training;

pub use error::{Error, Result};
