use super::PipelineConfig;
use crate::dda::{AgfnParams, DdaLayerParams};
use crate::error::{Error, Result};
use crate::lsa::LsaParams;
use crate::rng::rng_for;
use crate::tensor::{LinearLayer, Module, Tensor};

/// All trainable weights of the fusion pipeline.
#[derive(Clone, Debug)]
pub struct FusionModel {
    /// Voxel features `C_v -> d` (v-query initialisation).
    pub voxel_in: LinearLayer,
    /// Voxel features `C_v -> C_c` before splatting into camera maps.
    pub voxel_to_camera: LinearLayer,
    /// Enhanced camera features `C_c -> d` (c-query initialisation).
    pub camera_in: LinearLayer,
    pub agfn: AgfnParams,
    pub lsa: LsaParams,
    pub dda: Vec<DdaLayerParams>,
    /// Final v-queries `d -> C_v`, written back into the grid.
    pub voxel_out: LinearLayer,
}

impl FusionModel {
    /// Seeded initialisation; each block draws from its own labelled stream.
    pub fn init(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let s = config.seed;
        let (d, cc, cv, h) = (config.d_model, config.camera_channels, config.voxel_channels, config.ffn_hidden);
        let dda = (0..config.dda.layers)
            .map(|i| {
                DdaLayerParams::init(d, cc, h, config.dda.heads, config.dda.keys, &mut rng_for(s, &format!("model.dda.{i}")))
            })
            .collect::<Result<_>>()?;
        Ok(FusionModel {
            voxel_in: LinearLayer::init(cv, d, true, &mut rng_for(s, "model.voxel_in")),
            voxel_to_camera: LinearLayer::init(cv, cc, true, &mut rng_for(s, "model.voxel_to_camera")),
            camera_in: LinearLayer::init(cc, d, true, &mut rng_for(s, "model.camera_in")),
            agfn: AgfnParams::init(cc, &mut rng_for(s, "model.agfn")),
            lsa: LsaParams::init(d, h, config.lsa.layers, &mut rng_for(s, "model.lsa")),
            dda,
            voxel_out: LinearLayer::init(d, cv, true, &mut rng_for(s, "model.voxel_out")),
        })
    }

    /// Identity projections, averaging AGFN, pass-through LSA and
    /// single-head DDA layers with zero offset/weight/gate networks.
    /// Requires `C_v = C_c = d_model`.
    pub fn identity(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        if config.camera_channels != d || config.voxel_channels != d {
            return Err(Error::Config("identity model needs equal voxel, camera and model widths".into()));
        }
        let h = config.ffn_hidden;
        Ok(FusionModel {
            voxel_in: LinearLayer::identity(d, true),
            voxel_to_camera: LinearLayer::identity(d, true),
            camera_in: LinearLayer::identity(d, true),
            agfn: AgfnParams::averaging(d),
            lsa: LsaParams::identity(d, h, config.lsa.layers),
            dda: (0..config.dda.layers)
                .map(|_| DdaLayerParams::identity(d, h, config.dda.keys))
                .collect::<Result<_>>()?,
            voxel_out: LinearLayer::identity(d, true),
        })
    }

    pub fn d_model(&self) -> usize {
        self.voxel_in.out_features()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

impl Module for FusionModel {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.voxel_in.parameters();
        p.extend(self.voxel_to_camera.parameters());
        p.extend(self.camera_in.parameters());
        p.extend(self.agfn.parameters());
        p.extend(self.lsa.parameters());
        for layer in &self.dda {
            p.extend(layer.parameters());
        }
        p.extend(self.voxel_out.parameters());
        p
    }
}
