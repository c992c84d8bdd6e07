//! Binary formats: `DFTENSR0` tensor dumps and `DFSCENE0` scene files.
//!
//! A tensor dump is the 8-byte magic, a little-endian `u32` rank, `rank`
//! little-endian `u64` dimensions and the row-major `f64` payload. A scene
//! file is its own magic, a `u32` header length, a JSON header and then the
//! positions, point features and one camera image as tensor dumps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SceneInput;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, PointCloud};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"DFTENSR0";
pub const SCENE_MAGIC: &[u8; 8] = b"DFSCENE0";

/// Size in bytes of the dump of a tensor with this shape.
pub fn tensor_file_size(shape: &[usize]) -> usize {
    8 + 4 + 8 * shape.len() + 8 * shape.iter().product::<usize>()
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(tensor_file_size(t.shape()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Byte cursor that reports the offset of whatever it fails to read.
pub(crate) struct Cursor<'a> {
    what: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(what: &'a str, bytes: &'a [u8]) -> Self {
        Cursor { what, bytes, pos: 0 }
    }

    pub(crate) fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse { what: self.what.to_string(), offset: offset as u64, msg: msg.into() }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(self.pos, format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let at = self.pos;
        let got = self.take(8)?;
        if got != expected {
            return Err(self.error(at, format!("bad magic {:?}", String::from_utf8_lossy(got))));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        self.magic(TENSOR_MAGIC)?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = self.pos;
            let d = usize::try_from(self.u64()?).map_err(|_| self.error(at, "dimension overflows usize"))?;
            numel = numel.checked_mul(d).ok_or_else(|| self.error(at, "element count overflows"))?;
            shape.push(d);
        }
        let at = self.pos;
        let bytes = numel.checked_mul(8).ok_or_else(|| self.error(at, "payload size overflows"))?;
        let payload = self.take(bytes)?;
        let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(data, &shape).map_err(|e| self.error(at, e.to_string()))
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut c = Cursor::new("tensor dump", bytes);
    let t = c.tensor()?;
    c.finish()?;
    Ok(t)
}

pub fn dump_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    fs::write(path, buf).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path).map_err(Error::file(path))?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneHeader {
    points: usize,
    feature_dim: usize,
    cameras: Vec<CameraModel>,
}

pub fn encode_scene(scene: &SceneInput) -> Result<Vec<u8>> {
    scene.validate()?;
    let header = serde_json::to_vec(&SceneHeader {
        points: scene.cloud.len(),
        feature_dim: scene.cloud.feature_dim,
        cameras: scene.cameras.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let n = scene.cloud.len();
    let positions: Vec<f64> = scene.cloud.positions.iter().flatten().copied().collect();
    encode_tensor(&Tensor::new(positions, &[n, 3])?, &mut out);
    encode_tensor(&Tensor::new(scene.cloud.features.clone(), &[n, scene.cloud.feature_dim])?, &mut out);
    for image in &scene.images {
        encode_tensor(image, &mut out);
    }
    Ok(out)
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneInput> {
    let mut c = Cursor::new("scene file", bytes);
    c.magic(SCENE_MAGIC)?;
    let len = c.u32()? as usize;
    let at = c.pos;
    let header: SceneHeader =
        serde_json::from_slice(c.take(len)?).map_err(|e| c.error(at, format!("header: {e}")))?;
    let at = c.pos;
    let positions = c.tensor()?;
    let features = c.tensor()?;
    if positions.shape() != [header.points, 3] || features.shape() != [header.points, header.feature_dim] {
        return Err(c.error(at, "point tensors do not match the header"));
    }
    let positions = positions.data().chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
    let cloud = PointCloud::new(positions, features.to_vec(), header.feature_dim)?;
    let images = (0..header.cameras.len()).map(|_| c.tensor()).collect::<Result<Vec<_>>>()?;
    c.finish()?;
    let scene = SceneInput { cloud, cameras: header.cameras, images };
    scene.validate().map_err(|e| c.error(0, e.to_string()))?;
    Ok(scene)
}

pub fn save_scene(scene: &SceneInput, path: &Path) -> Result<()> {
    fs::write(path, encode_scene(scene)?).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<SceneInput> {
    decode_scene(&fs::read(path).map_err(Error::file(path))?)
}
