use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned voxel grid: half-open extents `[range_min, range_max)` in
/// meters, split into cells of `voxel_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub range_min: Point3,
    pub range_max: Point3,
    pub voxel_size: Point3,
}

impl GridSpec {
    pub fn kitti() -> Self {
        GridSpec {
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            voxel_size: [0.05, 0.05, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let (lo, hi, size) = (self.range_min[axis], self.range_max[axis], self.voxel_size[axis]);
            if !(lo.is_finite() && hi.is_finite() && size.is_finite()) {
                return Err(Error::Config(format!("grid axis {axis} is not finite")));
            }
            if hi <= lo {
                return Err(Error::Config(format!("grid axis {axis}: range_max {hi} <= range_min {lo}")));
            }
            if size <= 0.0 {
                return Err(Error::Config(format!("grid axis {axis}: voxel size {size} <= 0")));
            }
        }
        Ok(())
    }

    /// Cell counts `[W_v, L_v, H_v]`: `ceil(extent / size)`, with extents
    /// that divide evenly up to rounding noise (70.4 / 0.05) snapped to the
    /// exact integer.
    pub fn dims(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for (axis, d) in out.iter_mut().enumerate() {
            let ratio = (self.range_max[axis] - self.range_min[axis]) / self.voxel_size[axis];
            let nearest = ratio.round();
            let cells = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
                nearest
            } else {
                ratio.ceil()
            };
            *d = (cells as usize).max(1);
        }
        out
    }

    pub fn num_cells(&self) -> usize {
        self.dims().iter().product()
    }

    /// Cell containing `p`, or `None` outside the half-open range.
    pub fn index_of(&self, p: &Point3) -> Option<[usize; 3]> {
        let dims = self.dims();
        let mut idx = [0; 3];
        for axis in 0..3 {
            let v = p[axis];
            if !(v >= self.range_min[axis] && v < self.range_max[axis]) {
                return None;
            }
            let i = ((v - self.range_min[axis]) / self.voxel_size[axis]).floor();
            if i < 0.0 || i as usize >= dims[axis] {
                return None;
            }
            idx[axis] = i as usize;
        }
        Some(idx)
    }

    pub fn center(&self, index: [usize; 3]) -> Point3 {
        let mut c = [0.0; 3];
        for axis in 0..3 {
            c[axis] = self.range_min[axis] + (index[axis] as f64 + 0.5) * self.voxel_size[axis];
        }
        c
    }
}

/// Points with one feature vector each, stored flat.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if positions.len() * feature_dim != features.len() {
            return Err(Error::invalid(format!(
                "{} points with feature width {feature_dim} need {} values, got {}",
                positions.len(),
                positions.len() * feature_dim,
                features.len()
            )));
        }
        Ok(PointCloud { positions, features, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }
}

/// Non-empty voxels of a grid, sorted by `(x, y, z)` index, with one
/// feature row per voxel.
#[derive(Clone, Debug)]
pub struct SparseVoxelGrid {
    pub spec: GridSpec,
    pub indices: Vec<[usize; 3]>,
    pub centers: Vec<Point3>,
    /// `[Q, C_v]`
    pub features: Tensor,
}

impl SparseVoxelGrid {
    pub fn empty(spec: GridSpec, feature_dim: usize) -> Self {
        SparseVoxelGrid {
            spec,
            indices: Vec::new(),
            centers: Vec::new(),
            features: Tensor::zeros(&[0, feature_dim]),
        }
    }

    /// Builds a grid from explicit indices; centers are derived.
    pub fn from_parts(spec: GridSpec, indices: Vec<[usize; 3]>, features: Tensor) -> Result<Self> {
        let dims = spec.dims();
        if features.rank() != 2 || features.shape()[0] != indices.len() {
            return Err(Error::invalid(format!(
                "{} voxels but feature shape {:?}",
                indices.len(),
                features.shape()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for idx in &indices {
            if (0..3).any(|a| idx[a] >= dims[a]) {
                return Err(Error::invalid(format!("voxel index {idx:?} outside grid {dims:?}")));
            }
            if !seen.insert(*idx) {
                return Err(Error::invalid(format!("duplicate voxel index {idx:?}")));
            }
        }
        let centers = indices.iter().map(|&i| spec.center(i)).collect();
        Ok(SparseVoxelGrid { spec, indices, centers, features })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Same voxels, different feature rows.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != self.len() {
            return Err(Error::shape("with_features", self.features.shape(), features.shape()));
        }
        Ok(SparseVoxelGrid {
            spec: self.spec.clone(),
            indices: self.indices.clone(),
            centers: self.centers.clone(),
            features,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VoxelizeStats {
    pub assigned: usize,
    pub dropped: usize,
}

/// Assigns every in-range point to its cell and mean-pools the features of
/// each occupied cell.
pub fn voxelize(cloud: &PointCloud, spec: &GridSpec) -> Result<(SparseVoxelGrid, VoxelizeStats)> {
    spec.validate()?;
    let c = cloud.feature_dim;
    let mut cells: BTreeMap<[usize; 3], (Vec<f64>, usize)> = BTreeMap::new();
    let mut stats = VoxelizeStats::default();
    for (i, p) in cloud.positions.iter().enumerate() {
        let Some(idx) = spec.index_of(p) else {
            stats.dropped += 1;
            continue;
        };
        stats.assigned += 1;
        let (sum, count) = cells.entry(idx).or_insert_with(|| (vec![0.0; c], 0));
        sum.iter_mut().zip(cloud.feature(i)).for_each(|(s, f)| *s += f);
        *count += 1;
    }

    let mut indices = Vec::with_capacity(cells.len());
    let mut features = Vec::with_capacity(cells.len() * c);
    for (idx, (sum, count)) in cells {
        indices.push(idx);
        features.extend(sum.iter().map(|s| s / count as f64));
    }
    let q = indices.len();
    let features = Tensor::new(features, &[q, c])?;
    Ok((SparseVoxelGrid::from_parts(spec.clone(), indices, features)?, stats))
}
