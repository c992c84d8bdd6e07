//! Voxel grids, camera projection and BEV flattening.

mod bev;
mod camera;
mod voxel;

pub use bev::to_bev;
pub use camera::{IDENTITY4, select_camera, CameraModel, FeatureMap2D, Projection};
pub use voxel::{voxelize, GridSpec, PointCloud, SparseVoxelGrid, VoxelizeStats};

pub type Point3 = [f64; 3];
