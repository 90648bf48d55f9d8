//! Voxel and multi-view convolutional networks for 3D shape classification,
//! combined by a linear fusion of their class scores.
//!
//! The crate covers the whole pipeline: OFF mesh parsing and augmentation,
//! orientation sampling, surface voxelization, Phong-shaded multi-view
//! rendering, a small CPU tensor engine with reverse-mode gradients, the
//! network definitions, and the training/evaluation/fusion loops.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod mesh;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod transform;
mod util;
pub mod voxel;

pub use error::{Error, Result};
pub use mesh::{JitterConfig, TriangleMesh};
pub use models::{ClassScores, NetworkSpec};
pub use util::derive_seed;

pub use nn::{LayerSpec, Network, OptimizerConfig, Tensor};
pub use render::{CameraRig, ViewImage};
pub use transform::{Orientation, OrientationSet};
pub use voxel::VoxelGrid;
