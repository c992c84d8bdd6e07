use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::rng::derive_seed;
use crate::sampling::GroupSpec;

pub const SEED_ENV: &str = "DUALFUSION_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsaConfig {
    pub centroids: usize,
    pub radius: f64,
    pub max_members: usize,
    pub layers: usize,
    #[serde(default)]
    pub random_start: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdaConfig {
    pub heads: usize,
    pub keys: usize,
    pub layers: usize,
}

/// Scene used by the overfit probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub points: usize,
    pub cameras: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { points: 40, cameras: 4, lr: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub d_model: usize,
    /// Camera feature channels `C_c`.
    pub camera_channels: usize,
    /// Voxel feature channels `C_v`; equals the point feature width.
    pub voxel_channels: usize,
    /// Hidden width of every FFN.
    pub ffn_hidden: usize,
    pub lsa: LsaConfig,
    pub dda: DdaConfig,
    /// Feature-grid size of synthetic cameras, in cells.
    pub image_size: [usize; 2],
    pub stride: f64,
    /// Focal length of synthetic cameras, in pixels.
    pub focal_px: f64,
    pub seed: u64,
    #[serde(default)]
    pub probe: ProbeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl PipelineConfig {
    /// Small scene: 8 x 8 x 2 m grid of 1 m voxels, d_model 32, two
    /// dual-fusion layers.
    pub fn toy() -> Self {
        PipelineConfig {
            grid: GridSpec {
                range_min: [0.0, -4.0, -1.0],
                range_max: [8.0, 4.0, 1.0],
                voxel_size: [1.0, 1.0, 1.0],
            },
            d_model: 32,
            camera_channels: 16,
            voxel_channels: 4,
            ffn_hidden: 32,
            lsa: LsaConfig { centroids: 8, radius: 2.0, max_members: 8, layers: 2, random_start: false },
            dda: DdaConfig { heads: 2, keys: 4, layers: 2 },
            image_size: [12, 8],
            stride: 8.0,
            focal_px: 48.0,
            seed: 0,
            probe: ProbeConfig::default(),
        }
    }

    /// KITTI ranges with the published LSA (1024 / 2.0 / 32) and layer
    /// count (4). The voxel size is coarsened from 0.05 x 0.05 x 0.1 m so
    /// the dense BEV output fits in memory.
    pub fn kitti() -> Self {
        PipelineConfig {
            grid: GridSpec {
                range_min: [0.0, -40.0, -3.0],
                range_max: [70.4, 40.0, 1.0],
                voxel_size: [0.4, 0.4, 0.4],
            },
            d_model: 32,
            camera_channels: 16,
            voxel_channels: 1,
            ffn_hidden: 32,
            lsa: LsaConfig { centroids: 1024, radius: 2.0, max_members: 32, layers: 2, random_start: false },
            dda: DdaConfig { heads: 2, keys: 4, layers: 4 },
            image_size: [156, 47],
            stride: 8.0,
            focal_px: 721.5377,
            seed: 0,
            probe: ProbeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model {} must be even and positive", self.d_model));
        }
        if self.camera_channels == 0 || self.voxel_channels == 0 || self.ffn_hidden == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.dda.heads == 0 || self.dda.keys == 0 || !self.d_model.is_multiple_of(self.dda.heads) {
            return bad(format!("{} heads / {} keys incompatible with d_model {}", self.dda.heads, self.dda.keys, self.d_model));
        }
        if self.lsa.layers == 0 {
            return bad("at least one local self-attention layer is required".into());
        }
        self.group_spec().validate()?;
        if self.image_size[0] == 0 || self.image_size[1] == 0 || !(self.stride > 0.0) || !(self.focal_px > 0.0) {
            return bad("camera image size, stride and focal length must be positive".into());
        }
        if self.probe.points == 0 || self.probe.cameras == 0 {
            return bad("probe needs at least one point and one camera".into());
        }
        Ok(())
    }

    pub fn group_spec(&self) -> GroupSpec {
        GroupSpec {
            centroids: self.lsa.centroids,
            radius: self.lsa.radius,
            max_members: self.lsa.max_members,
            seed: derive_seed(self.seed, "lsa.groups"),
            random_start: self.lsa.random_start,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Seed precedence: command-line flag, then `DUALFUSION_SEED`, then config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}
