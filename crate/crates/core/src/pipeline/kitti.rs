//! KITTI object-detection inputs: Velodyne scans and calibration files.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, PointCloud};

/// Rotation-orthonormality tolerance for calibrations printed with about
/// seven significant digits.
pub const CALIB_TOLERANCE: f64 = 1e-5;
/// Full-resolution KITTI color image in pixels.
pub const IMAGE_PX: [usize; 2] = [1242, 375];
pub const STRIDE: f64 = 8.0;

/// Feature-grid size of a KITTI image at `stride`, rounded up.
pub fn image_cells(stride: f64) -> [usize; 2] {
    IMAGE_PX.map(|p| (p as f64 / stride).ceil() as usize)
}

/// Little-endian `f32` quadruples `(x, y, z, intensity)`; the intensity is
/// the one-channel point feature.
pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        let offset = (bytes.len() - bytes.len() % 16) as u64;
        return Err(Error::Parse {
            what: "velodyne scan".into(),
            offset,
            msg: format!("{} bytes is not a whole number of 16-byte points", bytes.len()),
        });
    }
    let n = bytes.len() / 16;
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        positions.push([f(0), f(1), f(2)]);
        features.push(f(3));
    }
    if let Some(i) = positions.iter().zip(&features).position(|(p, f)| !f.is_finite() || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Parse {
            what: "velodyne scan".into(),
            offset: 16 * i as u64,
            msg: "non-finite value".into(),
        });
    }
    PointCloud::new(positions, features, 1)
}

pub fn load_kitti_velodyne(path: &Path) -> Result<PointCloud> {
    parse_velodyne(&fs::read(path).map_err(Error::file(path))?)
}

/// Values of one `KEY: v v v ...` line and the byte offset of the line.
fn find_row(text: &str, key: &str) -> Result<(Vec<f64>, usize)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some((k, rest)) = line.split_once(':') {
            if k.trim() == key {
                let values = rest
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                            what: "calibration".into(),
                            offset: offset as u64,
                            msg: format!("{key}: bad number {tok:?}"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                return Ok((values, offset));
            }
        }
        offset += line.len();
    }
    Err(Error::MissingKey { what: "calibration".into(), key: key.into() })
}

fn row_of(text: &str, key: &str, allowed: &[usize]) -> Result<Vec<f64>> {
    let (values, offset) = find_row(text, key)?;
    if !allowed.contains(&values.len()) {
        return Err(Error::Parse {
            what: "calibration".into(),
            offset: offset as u64,
            msg: format!("{key}: expected {allowed:?} numbers, got {}", values.len()),
        });
    }
    Ok(values)
}

/// Camera 2 (left color) of a KITTI calibration. The projection `P2 = K [I | t]`
/// is split into intrinsics `K` and a translation folded into the
/// rectification, so `K · [R0 | t] · Tr · p` reproduces `P2 · R0 · Tr · p`.
pub fn parse_kitti_calib(text: &str) -> Result<Vec<CameraModel>> {
    let p2 = row_of(text, "P2", &[12])?;
    let r0 = row_of(text, "R0_rect", &[9, 12])?;
    let tr = row_of(text, "Tr_velo_to_cam", &[12])?;

    let k = Matrix3::from_fn(|r, c| p2[4 * r + c]);
    let k_inv = k.try_inverse().ok_or_else(|| Error::Config("P2 intrinsics are singular".into()))?;
    let t = k_inv * Vector3::new(p2[3], p2[7], p2[11]);
    let r0_at = |r: usize, c: usize| if r0.len() == 9 { r0[3 * r + c] } else { r0[4 * r + c] };

    let mut rectification = [[0.0; 4]; 4];
    let mut extrinsics = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            rectification[r][c] = r0_at(r, c);
        }
        rectification[r][3] = t[r] + if r0.len() == 12 { r0[4 * r + 3] } else { 0.0 };
        for c in 0..4 {
            extrinsics[r][c] = tr[4 * r + c];
        }
    }
    rectification[3][3] = 1.0;
    extrinsics[3][3] = 1.0;

    // optical axis in the LiDAR frame; +y is left, so clockwise yaw is -atan2(y, x)
    let rot = Matrix3::from_fn(|r, c| rectification[r][c]) * Matrix3::from_fn(|r, c| extrinsics[r][c]);
    let axis = rot.row(2);
    let yaw_offset = -axis[1].atan2(axis[0]);

    let camera = CameraModel {
        id: "P2".into(),
        intrinsics: std::array::from_fn(|r| std::array::from_fn(|c| k[(r, c)])),
        extrinsics,
        rectification,
        image_size: image_cells(STRIDE),
        stride: STRIDE,
        yaw_offset: if yaw_offset == 0.0 { 0.0 } else { yaw_offset },
    };
    camera.validate_with_tolerance(CALIB_TOLERANCE)?;
    Ok(vec![camera])
}

pub fn load_kitti_calib(path: &Path) -> Result<Vec<CameraModel>> {
    parse_kitti_calib(&fs::read_to_string(path).map_err(Error::file(path))?)
}
