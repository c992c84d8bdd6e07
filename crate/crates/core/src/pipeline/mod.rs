//! End-to-end wiring: voxelize, enhance camera features, encode v-queries
//! with local self-attention, decode both query streams through the
//! dual-fusion layers and flatten the result into a BEV map.

mod config;
pub mod diagnostics;
pub mod io;
pub mod kitti;
mod model;
mod probe;
mod run;
mod scene;

pub use config::{resolve_seed, DdaConfig, LsaConfig, PipelineConfig, ProbeConfig, SEED_ENV};
pub use model::FusionModel;
pub use probe::overfit_probe;
pub use run::{forward, prepare, run_pipeline, run_with_model, Forward, PipelineOutput, PreparedScene, RunReport, StageStats, StageTiming};
pub use scene::{synth_scene, synthetic_images, SceneInput};
