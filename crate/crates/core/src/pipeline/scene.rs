use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, PointCloud};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// LiDAR points plus one raw camera feature map `[W, H, C_c]` per camera.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub cloud: PointCloud,
    pub cameras: Vec<CameraModel>,
    pub images: Vec<Tensor>,
}

impl SceneInput {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::Config("a scene needs at least one camera".into()));
        }
        if self.images.len() != self.cameras.len() {
            return Err(Error::Config(format!("{} cameras but {} images", self.cameras.len(), self.images.len())));
        }
        let channels = self.images[0].shape().get(2).copied();
        for (cam, img) in self.cameras.iter().zip(&self.images) {
            cam.validate_with_tolerance(super::kitti::CALIB_TOLERANCE)?;
            let [w, h] = cam.image_size;
            if img.rank() != 3 || img.shape()[..2] != [w, h] || img.shape().get(2).copied() != channels {
                return Err(Error::Config(format!(
                    "camera {} image has shape {:?}, expected [{w}, {h}, C]",
                    cam.id,
                    img.shape()
                )));
            }
        }
        if self.cloud.positions.iter().flatten().chain(&self.cloud.features).any(|v| !v.is_finite()) {
            return Err(Error::Config("point cloud holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn camera_channels(&self) -> usize {
        self.images[0].shape()[2]
    }
}

/// Ring camera `k` of `n`: yaw `2πk/n` wrapped into `(-π, π]`.
fn ring_yaw(k: usize, n: usize) -> f64 {
    let yaw = 2.0 * PI * k as f64 / n as f64;
    if yaw > PI {
        yaw - 2.0 * PI
    } else {
        yaw
    }
}

/// Stand-in backbone output: a standard-normal `[W, H, channels]` map per
/// camera, seeded per camera index.
pub fn synthetic_images(cameras: &[CameraModel], channels: usize, seed: u64) -> Result<Vec<Tensor>> {
    cameras
        .iter()
        .enumerate()
        .map(|(k, cam)| {
            let [w, h] = cam.image_size;
            let mut rng = rng_for(seed, &format!("scene.image.{k}"));
            let data = (0..w * h * channels).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(data, &[w, h, channels])
        })
        .collect()
}

/// Random scene: points uniform in the grid range with standard-normal
/// features, `n_cameras` on a ring of distinct yaws, standard-normal images.
pub fn synth_scene(seed: u64, n_points: usize, n_cameras: usize, config: &PipelineConfig) -> Result<SceneInput> {
    config.validate()?;
    if n_cameras == 0 {
        return Err(Error::Config("a scene needs at least one camera".into()));
    }
    let g = &config.grid;
    let mut prng = rng_for(seed, "scene.points");
    let positions = (0..n_points)
        .map(|_| std::array::from_fn(|a| prng.random_range(g.range_min[a]..g.range_max[a])))
        .collect();
    let mut frng = rng_for(seed, "scene.features");
    let cv = config.voxel_channels;
    let features = (0..n_points * cv).map(|_| frng.sample(StandardNormal)).collect();
    let cloud = PointCloud::new(positions, features, cv)?;

    let cameras: Vec<CameraModel> = (0..n_cameras)
        .map(|k| {
            CameraModel::looking_at_yaw(
                format!("cam{k}"),
                ring_yaw(k, n_cameras),
                config.image_size,
                config.stride,
                config.focal_px,
            )
        })
        .collect();
    let images = synthetic_images(&cameras, config.camera_channels, seed)?;
    Ok(SceneInput { cloud, cameras, images })
}
