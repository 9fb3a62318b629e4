//! Aerial navigation world model toolkit.
//!
//! Procedural RGB-D scenes, trajectory datasets with four-view enrichment,
//! depth-based future frame projection, an action-conditioned diffusion
//! transformer with its own small autodiff, autoregressive rollout, trajectory
//! ranking and the metrics used to evaluate all of it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ffp;
pub mod frame;
pub mod geometry;
pub mod model;
pub mod planner;
pub mod rollout;
pub mod scene;

pub use error::{Error, Result};
pub use frame::FrameRGBD;
pub use geometry::{Action4, Intrinsics, Pose4, StepLimits};
