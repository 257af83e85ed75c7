//! Scene mockups from keypoint maps.
//!
//! Recovers the 3D arrangement of deformable objects (chairs, by default)
//! from per-keypoint 2D probability maps and a known camera. Candidates are
//! proposed from pairs of detected keypoints, fitted with a PCA deformable
//! template by Levenberg-Marquardt, and selected by binary energy
//! minimisation with a pairwise co-occurrence mixture prior. Selection and
//! refitting iterate so that confidently placed objects help recover
//! occluded neighbours.
//!
//! The crate also ships the synthetic harness used to measure all of this:
//! scene generation, map rendering with simulated occlusion, evaluation
//! measures and an ablation runner. See the `examples/` directory for one
//! runnable program per capability.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fitting;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod keypoint_maps;
pub mod metrics;
pub mod scene_stats;
pub mod selection;
pub mod template;

pub use error::{Error, Result};
