//! Synthetic patient-modeling kit: a parametric body-model engine, a
//! synthetic (pose, shape, camera) → heatmap training-pair generator, a
//! score-based two-branch heatmap fusion rule, a small feed-forward mesh
//! regressor with a from-scratch backprop engine, the standard 2D/3D pose
//! evaluation metrics, and the table-height isocentering computation used
//! for automated scanner positioning.
//!
//! Everything is deterministic under explicit seeds: model construction,
//! camera sampling, dataset generation (independent of worker count), and
//! single-threaded training are all bit-reproducible.
//!
//! All geometry is in meters internally; metric reports convert to mm, cm
//! or px at the edges.

pub mod body_model;
pub mod camera;
pub mod config;
pub mod fusion;
pub mod heatmap;
pub mod isocenter;
pub mod metrics;
pub mod regressor;
pub mod rng;
pub mod synthgen;

pub use body_model::{BodyModel, PoseParams, PosedBody, ShapeParams};
pub use camera::{CameraExtrinsics, CameraIntrinsics, CameraSamplingConfig};
pub use heatmap::{HeatmapStack, KeypointSet};
