use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pinhole camera rigidly mounted on the LiDAR frame.
///
/// A LiDAR point is mapped to camera coordinates by
/// `rectification · extrinsics · [p; 1]`, to pixels by the intrinsics, and to
/// feature-grid cells by dividing by `stride`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: String,
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 4],
    pub rectification: [[f64; 4]; 4],
    /// Feature-grid size `(W', H')` in cells.
    pub image_size: [usize; 2],
    /// Pixels per feature cell.
    pub stride: f64,
    /// Optical-axis yaw relative to the ego forward axis; clockwise seen from
    /// above (towards the right) is positive.
    pub yaw_offset: f64,
}

pub const IDENTITY4: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Where a 3D point lands in a camera's feature grid. `p2d` is only
/// meaningful when `depth > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub p2d: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

impl Projection {
    /// Feature-grid cell containing the projection.
    pub fn pixel(&self) -> Option<[usize; 2]> {
        self.valid
            .then(|| [self.p2d[0].floor() as usize, self.p2d[1].floor() as usize])
    }
}

fn m3(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a[r][c])
}

fn m4(a: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| a[r][c])
}

impl CameraModel {
    /// Camera looking along `yaw` (clockwise from the LiDAR forward axis
    /// `+x`, with `+y` left and `+z` up), mounted at the LiDAR origin, with a
    /// centred principal point and focal length `focal_px`.
    pub fn looking_at_yaw(id: impl Into<String>, yaw: f64, image_size: [usize; 2], stride: f64, focal_px: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // rows: camera right, camera down, optical axis
        let extrinsics = [
            [-s, -c, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [c, -s, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let cx = image_size[0] as f64 * stride / 2.0;
        let cy = image_size[1] as f64 * stride / 2.0;
        CameraModel {
            id: id.into(),
            intrinsics: [[focal_px, 0.0, cx], [0.0, focal_px, cy], [0.0, 0.0, 1.0]],
            extrinsics,
            rectification: IDENTITY4,
            image_size,
            stride,
            yaw_offset: yaw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_tolerance(1e-9)
    }

    /// Checks the intrinsics are invertible and the extrinsic rotation block
    /// is orthonormal within `tol`.
    pub fn validate_with_tolerance(&self, tol: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("camera {}: {msg}", self.id)));
        let k = m3(&self.intrinsics);
        if !k.iter().all(|v| v.is_finite()) || k.determinant().abs() < 1e-12 {
            return bad("intrinsics are not invertible".into());
        }
        let e = m4(&self.extrinsics);
        if !e.iter().all(|v| v.is_finite()) || !m4(&self.rectification).iter().all(|v| v.is_finite()) {
            return bad("non-finite transform".into());
        }
        let r = e.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > tol {
            return bad(format!("extrinsic rotation not orthonormal (error {err:e})"));
        }
        if r.determinant() < 0.0 {
            return bad("extrinsic rotation is a reflection".into());
        }
        if e.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > tol) {
            return bad("extrinsics last row must be [0 0 0 1]".into());
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("empty image".into());
        }
        if !(self.stride > 0.0) {
            return bad(format!("stride {} must be positive", self.stride));
        }
        Ok(())
    }

    pub fn project(&self, p: &Point3) -> Projection {
        let cam = m4(&self.rectification) * m4(&self.extrinsics) * Vector4::new(p[0], p[1], p[2], 1.0);
        let pix = m3(&self.intrinsics) * cam.xyz();
        let depth = cam.z;
        let u = pix.x / pix.z / self.stride;
        let v = pix.y / pix.z / self.stride;
        let valid = depth > 0.0
            && pix.z > 0.0
            && u >= 0.0
            && v >= 0.0
            && u < self.image_size[0] as f64
            && v < self.image_size[1] as f64;
        Projection { p2d: [u, v], depth, valid }
    }
}

/// Among the cameras that see `p`, the one furthest to the right of the
/// direction of travel (largest `yaw_offset`, first listed on ties).
pub fn select_camera(cameras: &[CameraModel], p: &Point3) -> Option<(usize, Projection)> {
    let mut best: Option<(usize, Projection)> = None;
    for (i, cam) in cameras.iter().enumerate() {
        let proj = cam.project(p);
        if !proj.valid {
            continue;
        }
        if best.is_none_or(|(b, _)| cam.yaw_offset > cameras[b].yaw_offset) {
            best = Some((i, proj));
        }
    }
    best
}

/// Per-camera feature grid `[W', H', C]`.
#[derive(Clone, Debug)]
pub struct FeatureMap2D {
    pub camera: CameraModel,
    pub features: Tensor,
}

impl FeatureMap2D {
    pub fn new(camera: CameraModel, features: Tensor) -> Result<Self> {
        let [w, h] = camera.image_size;
        if features.rank() != 3 || features.shape()[0] != w || features.shape()[1] != h {
            return Err(Error::shape("feature map", &[w, h], features.shape()));
        }
        Ok(FeatureMap2D { camera, features })
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }
}
