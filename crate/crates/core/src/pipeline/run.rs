use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::io::dump_tensor;
use super::{FusionModel, PipelineConfig, SceneInput};
use crate::dda::{agfn, dual_fusion_layer, DualQuerySet, References};
use crate::error::{Error, Result};
use crate::geometry::{to_bev, voxelize, FeatureMap2D, SparseVoxelGrid, VoxelizeStats};
use crate::sampling::{gather_groups, Grouping};
use crate::tensor::Tensor;

/// Everything about a scene that does not depend on the weights.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub grid: SparseVoxelGrid,
    pub stats: VoxelizeStats,
    pub points: usize,
    pub refs: References,
    pub grouping: Grouping,
    pub fmaps: Vec<FeatureMap2D>,
    pub warnings: Vec<String>,
}

impl PreparedScene {
    pub fn valid_queries(&self) -> usize {
        self.refs.camera_ids.iter().filter(|c| c.is_some()).count()
    }
}

pub fn prepare(config: &PipelineConfig, scene: &SceneInput) -> Result<PreparedScene> {
    config.validate()?;
    scene.validate()?;
    if scene.cloud.feature_dim != config.voxel_channels {
        return Err(Error::Config(format!(
            "points carry {} features but voxel_channels is {}",
            scene.cloud.feature_dim, config.voxel_channels
        )));
    }
    if scene.camera_channels() != config.camera_channels {
        return Err(Error::Config(format!(
            "images carry {} channels but camera_channels is {}",
            scene.camera_channels(),
            config.camera_channels
        )));
    }
    let (grid, stats) = voxelize(&scene.cloud, &config.grid)?;
    let mut warnings = Vec::new();
    if grid.is_empty() {
        warnings.push("no non-empty voxels; BEV output is all zero".to_string());
    }
    if stats.dropped > 0 {
        warnings.push(format!("{} points outside the grid range were dropped", stats.dropped));
    }
    let refs = References::select(&grid.centers, &scene.cameras);
    let grouping = if grid.is_empty() { Grouping::empty() } else { gather_groups(&grid, &config.group_spec())? };
    if !grid.is_empty() && refs.camera_ids.iter().all(Option::is_none) {
        warnings.push("no voxel is visible in any camera; camera branch unused".to_string());
    }
    let fmaps = scene
        .cameras
        .iter()
        .zip(&scene.images)
        .map(|(cam, img)| FeatureMap2D::new(cam.clone(), img.clone()))
        .collect::<Result<_>>()?;
    Ok(PreparedScene { grid, stats, points: scene.cloud.len(), refs, grouping, fmaps, warnings })
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

/// Result of one forward pass. `stages` holds named intermediates in
/// pipeline order when recording was requested.
#[derive(Clone, Debug)]
pub struct Forward {
    pub bev: Tensor,
    pub stages: Vec<(String, Tensor)>,
    pub timings: Vec<StageTiming>,
}

struct Recorder {
    enabled: bool,
    stages: Vec<(String, Tensor)>,
    timings: Vec<StageTiming>,
    clock: Instant,
}

impl Recorder {
    fn mark(&mut self, name: impl Into<String>, t: &Tensor) {
        let name = name.into();
        let now = Instant::now();
        self.timings.push(StageTiming { name: name.clone(), seconds: (now - self.clock).as_secs_f64() });
        self.clock = now;
        if self.enabled {
            self.stages.push((name, t.clone()));
        }
    }
}

/// Voxel features -> AGFN per camera -> LSA -> dual-fusion layers -> BEV.
pub fn forward(model: &FusionModel, prepared: &PreparedScene, record: bool) -> Result<Forward> {
    let mut rec = Recorder { enabled: record, stages: Vec::new(), timings: Vec::new(), clock: Instant::now() };
    let grid = &prepared.grid;
    let q = grid.len();
    let d = model.d_model();
    rec.mark("voxel_features", &grid.features);
    if q == 0 {
        let bev = to_bev(&grid.with_features(Tensor::zeros(&[0, model.voxel_out.out_features()]))?)?;
        rec.mark("bev", &bev);
        return Ok(Forward { bev, stages: rec.stages, timings: rec.timings });
    }

    let camera_grid = grid.with_features(model.voxel_to_camera.forward(&grid.features)?)?;
    let mut enhanced = Vec::with_capacity(prepared.fmaps.len());
    for (k, fmap) in prepared.fmaps.iter().enumerate() {
        let out = agfn(&model.agfn, &camera_grid, fmap)?.features;
        rec.mark(format!("camera_enhanced_{k}"), &out);
        enhanced.push(out);
    }

    let mut c_init: Option<Tensor> = None;
    for (k, fmap) in enhanced.iter().enumerate() {
        let (rows, pixels): (Vec<usize>, Vec<usize>) = (0..q)
            .filter(|&i| prepared.refs.camera_ids[i] == Some(k))
            .map(|i| {
                let [u, v] = prepared.refs.pixels[i].expect("valid query has a pixel");
                (i, u * fmap.shape()[1] + v)
            })
            .unzip();
        if rows.is_empty() {
            continue;
        }
        let [w, h, c] = [fmap.shape()[0], fmap.shape()[1], fmap.shape()[2]];
        let sampled = fmap.reshape(&[w * h, c])?.index_select(&pixels)?;
        let part = model.camera_in.forward(&sampled)?.scatter_add(&rows, q)?;
        c_init = Some(match c_init {
            Some(acc) => acc.add(&part)?,
            None => part,
        });
    }
    let c_init = c_init.unwrap_or_else(|| Tensor::zeros(&[q, d]));
    rec.mark("c_queries_init", &c_init);

    let v_init = model.voxel_in.forward(&grid.features)?;
    let v_lsa = crate::lsa::run_lsa(&v_init, &grid.centers, &prepared.grouping, &model.lsa)?;
    rec.mark("v_queries_lsa", &v_lsa);

    let mut queries = DualQuerySet::new(v_lsa, c_init, grid.centers.clone(), prepared.refs.clone())?;
    for (i, layer) in model.dda.iter().enumerate() {
        queries = dual_fusion_layer(layer, &enhanced, &queries)?;
        rec.mark(format!("dda_{i}_c_queries"), &queries.c_queries);
        rec.mark(format!("dda_{i}_v_queries"), &queries.v_queries);
    }

    let out = model.voxel_out.forward(&queries.v_queries)?;
    rec.mark("voxel_out", &out);
    let bev = to_bev(&grid.with_features(out)?)?;
    rec.mark("bev", &bev);
    Ok(Forward { bev, stages: rec.stages, timings: rec.timings })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageStats {
    pub name: String,
    pub shape: Vec<usize>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl StageStats {
    /// Population statistics of the tensor's values; `None` when empty.
    pub fn of(name: &str, t: &Tensor) -> Self {
        let data = t.data();
        let n = data.len() as f64;
        let (mean, std, min, max) = if data.is_empty() {
            (None, None, None, None)
        } else {
            let mean = data.iter().sum::<f64>() / n;
            let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let min = data.iter().copied().fold(f64::INFINITY, f64::min);
            let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (Some(mean), Some(var.sqrt()), Some(min), Some(max))
        };
        StageStats { name: name.to_string(), shape: t.shape().to_vec(), mean, std, min, max }
    }
}

/// Deterministic run summary; wall-clock timings are kept separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub points: usize,
    pub points_assigned: usize,
    pub points_dropped: usize,
    pub voxels: usize,
    pub valid_queries: usize,
    pub cameras: usize,
    pub groups: usize,
    pub parameters: usize,
    pub bev_shape: Vec<usize>,
    pub stages: Vec<StageStats>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub bev: Tensor,
    pub report: RunReport,
    pub stages: Vec<(String, Tensor)>,
    pub timings: Vec<StageTiming>,
}

impl PipelineOutput {
    /// Writes `<stage>.dft` for every stage, `report.json` and `timing.json`.
    pub fn write_dumps(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::file(dir))?;
        for (name, t) in &self.stages {
            dump_tensor(t, &dir.join(format!("{name}.dft")))?;
        }
        let report = dir.join("report.json");
        fs::write(&report, self.report.to_json()).map_err(Error::file(&report))?;
        let mut timing = serde_json::to_string_pretty(&self.timings)?;
        timing.push('\n');
        let path = dir.join("timing.json");
        fs::write(&path, timing).map_err(Error::file(&path))?;
        Ok(())
    }
}

pub fn run_with_model(config: &PipelineConfig, model: &FusionModel, scene: &SceneInput) -> Result<PipelineOutput> {
    let prepared = prepare(config, scene)?;
    let fwd = forward(model, &prepared, true)?;
    let report = RunReport {
        seed: config.seed,
        points: prepared.points,
        points_assigned: prepared.stats.assigned,
        points_dropped: prepared.stats.dropped,
        voxels: prepared.grid.len(),
        valid_queries: prepared.valid_queries(),
        cameras: prepared.fmaps.len(),
        groups: prepared.grouping.groups.len(),
        parameters: model.num_parameters(),
        bev_shape: fwd.bev.shape().to_vec(),
        stages: fwd.stages.iter().map(|(n, t)| StageStats::of(n, t)).collect(),
        warnings: prepared.warnings,
    };
    Ok(PipelineOutput { bev: fwd.bev, report, stages: fwd.stages, timings: fwd.timings })
}

/// Runs the pipeline with weights initialised from `config.seed`.
pub fn run_pipeline(config: &PipelineConfig, scene: &SceneInput) -> Result<PipelineOutput> {
    let model = FusionModel::init(config)?;
    run_with_model(config, &model, scene)
}
