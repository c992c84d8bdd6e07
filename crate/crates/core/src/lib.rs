//! Camera-LiDAR dual-query feature fusion.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f64 tensors with reverse-mode autodiff, linear layers
//!   and a finite-difference gradient oracle.
//! - [`geometry`]: voxelization, camera projection and BEV flattening.
//! - [`sampling`]: farthest point sampling and radius grouping of voxels.
//! - [`lsa`]: local self-attention over voxel groups.
//! - [`dda`]: dual-query deformable cross attention, gated fusion and the
//!   camera-feature enhancement network.
//! - [`pipeline`]: end-to-end wiring, configuration, scene IO and the
//!   overfit probe.

pub mod dda;
pub mod error;
pub mod geometry;
pub mod lsa;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
