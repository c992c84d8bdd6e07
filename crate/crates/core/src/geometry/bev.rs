use super::SparseVoxelGrid;
use crate::error::Result;
use crate::tensor::Tensor;

/// Dense bird's-eye-view map `[W_v, L_v, H_v · C]`: each voxel's feature row
/// lands at `(x, y)` in the channel block `[z·C, (z+1)·C)`. Differentiable
/// with respect to the grid features.
pub fn to_bev(grid: &SparseVoxelGrid) -> Result<Tensor> {
    let [w, l, h] = grid.spec.dims();
    let c = grid.feature_dim();
    let rows: Vec<usize> = grid.indices.iter().map(|&[x, y, z]| (x * l + y) * h + z).collect();
    grid.features
        .scatter_add(&rows, w * l * h)?
        .reshape(&[w, l, h * c])
}
