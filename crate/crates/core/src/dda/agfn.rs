use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{FeatureMap2D, SparseVoxelGrid};
use crate::tensor::{LinearLayer, Module, Tensor};

/// Per-pixel 1×1 convolutions of the camera-feature enhancement network.
#[derive(Clone, Debug)]
pub struct AgfnParams {
    pub conv_v: LinearLayer,
    pub conv_c: LinearLayer,
    /// `2C -> C` over the concatenation `[A, B]`.
    pub conv_r: LinearLayer,
}

impl AgfnParams {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        AgfnParams {
            conv_v: LinearLayer::init(channels, channels, true, rng),
            conv_c: LinearLayer::init(channels, channels, true, rng),
            conv_r: LinearLayer::init(2 * channels, channels, true, rng),
        }
    }

    /// Zero gate convolutions and `conv_r = [I I]`, so the output is the
    /// average of the splatted voxel map and the camera map.
    pub fn averaging(channels: usize) -> Self {
        let mut w = vec![0.0; channels * 2 * channels];
        for i in 0..channels {
            w[i * 2 * channels + i] = 1.0;
            w[i * 2 * channels + channels + i] = 1.0;
        }
        AgfnParams {
            conv_v: LinearLayer::zeros(channels, channels, true),
            conv_c: LinearLayer::zeros(channels, channels, true),
            conv_r: LinearLayer::from_weights(w, 2 * channels, channels, Some(vec![0.0; channels])).unwrap(),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_v.in_features()
    }
}

impl Module for AgfnParams {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.conv_v.parameters();
        p.extend(self.conv_c.parameters());
        p.extend(self.conv_r.parameters());
        p
    }
}

/// Projects voxel features into a `[W, H, C]` camera map: each listed voxel
/// row is written to its pixel, voxels sharing a pixel are averaged and
/// untouched pixels stay zero. `hits` pairs a feature row with a pixel.
pub fn agfn_splat(features: &Tensor, hits: &[(usize, [usize; 2])], size: [usize; 2]) -> Result<Tensor> {
    let [w, h] = size;
    let c = features.shape()[1];
    if hits.is_empty() {
        return Ok(Tensor::zeros(&[w, h, c]));
    }
    let rows: Vec<usize> = hits.iter().map(|(r, _)| *r).collect();
    let mut pixels = Vec::with_capacity(hits.len());
    let mut counts = vec![0usize; w * h];
    for (_, [u, v]) in hits {
        if *u >= w || *v >= h {
            return Err(Error::invalid(format!("pixel ({u}, {v}) outside {w}x{h} map")));
        }
        pixels.push(u * h + v);
        counts[u * h + v] += 1;
    }
    let inv: Vec<f64> = counts
        .iter()
        .flat_map(|&n| std::iter::repeat_n(if n == 0 { 0.0 } else { 1.0 / n as f64 }, c))
        .collect();
    features
        .index_select(&rows)?
        .scatter_add(&pixels, w * h)?
        .mul(&Tensor::new(inv, &[w * h, c])?)?
        .reshape(&[w, h, c])
}

/// Camera-feature enhancement:
///
/// ```text
/// A = T(F_v) ⊙ σ(Conv_v(T(F_v) + F_c))
/// B = F_c ⊙ σ(Conv_c(T(F_v) + F_c))
/// F'_c = Conv_r(A ⊕ B)
/// ```
///
/// `T` splats every voxel this camera sees into its quantized pixel. Grid
/// features must already have the camera's channel count.
pub fn agfn(params: &AgfnParams, grid: &SparseVoxelGrid, fmap: &FeatureMap2D) -> Result<FeatureMap2D> {
    let c = params.channels();
    if fmap.channels() != c || grid.feature_dim() != c {
        return Err(Error::shape("agfn", fmap.features.shape(), grid.features.shape()));
    }
    let [w, h] = fmap.camera.image_size;
    let hits: Vec<(usize, [usize; 2])> = grid
        .centers
        .iter()
        .enumerate()
        .filter_map(|(i, p)| fmap.camera.project(p).pixel().map(|px| (i, px)))
        .collect();
    let splat = agfn_splat(&grid.features, &hits, [w, h])?.reshape(&[w * h, c])?;
    let camera = fmap.features.reshape(&[w * h, c])?;
    let mixed = splat.add(&camera)?;
    let a = splat.mul(&params.conv_v.forward(&mixed)?.sigmoid())?;
    let b = camera.mul(&params.conv_c.forward(&mixed)?.sigmoid())?;
    let out = params.conv_r.forward(&Tensor::concat(&[&a, &b], 1)?)?;
    FeatureMap2D::new(fmap.camera.clone(), out.reshape(&[w, h, c])?)
}
