//! Seeded gradient-check instances for each differentiable fusion block.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dda::{agfn, deformable_attend, depth_pe, gated_fuse, AgfnParams, DdaLayerParams};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, FeatureMap2D, GridSpec, Point3, SparseVoxelGrid};
use crate::lsa::{lsa_group_layer, LsaLayer};
use crate::rng::rng_for;
use crate::tensor::gradcheck::GradCheckConfig;
use crate::tensor::{check_gradients, Module, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradModule {
    Lsa,
    DepthPe,
    Deformable,
    Gated,
    Agfn,
    /// depth_pe -> deformable_attend -> gated_fuse in one graph.
    DdaChain,
}

impl GradModule {
    pub const ALL: [GradModule; 6] = [
        GradModule::Lsa,
        GradModule::DepthPe,
        GradModule::Deformable,
        GradModule::Gated,
        GradModule::Agfn,
        GradModule::DdaChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradModule::Lsa => "lsa",
            GradModule::DepthPe => "depth-pe",
            GradModule::Deformable => "deformable",
            GradModule::Gated => "gated",
            GradModule::Agfn => "agfn",
            GradModule::DdaChain => "dda-chain",
        }
    }
}

impl fmt::Display for GradModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown module {s:?}")))
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, grad: bool) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::leaf((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape, grad).unwrap()
}

/// Scalar loss `sum(out ⊙ w)` with fixed random weights, so every output
/// element gets a distinct upstream gradient.
fn weighted_sum(out: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(out.mul(w)?.sum())
}

struct Instance {
    leaves: Vec<Tensor>,
    loss: Box<dyn Fn() -> Result<Tensor>>,
}

fn instance(module: GradModule, seed: u64) -> Result<Instance> {
    let mut rng = rng_for(seed, &format!("gradcheck.{}", module.name()));
    let q = rng.random_range(1..=4usize);
    Ok(match module {
        GradModule::Lsa => {
            let d = 4;
            let k = rng.random_range(1..=8usize);
            let layer = LsaLayer::init(d, 5, &mut rng);
            let f = uniform(&mut rng, &[k, d], -2.0, 2.0, true);
            let pos: Vec<Point3> = (0..k)
                .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
                .collect();
            let w = uniform(&mut rng, &[k, d], -1.0, 1.0, false);
            let mut leaves = vec![f.clone()];
            leaves.extend(layer.parameters());
            Instance { leaves, loss: Box::new(move || weighted_sum(&lsa_group_layer(&layer, &f, &pos)?, &w)) }
        }
        GradModule::DepthPe => {
            let d = 8;
            let x = uniform(&mut rng, &[q], 0.0, 70.0, true);
            let w = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            Instance { leaves: vec![x.clone()], loss: Box::new(move || weighted_sum(&depth_pe(&x, d)?, &w)) }
        }
        GradModule::Deformable => {
            let (d, c) = (4, 3);
            let layer = DdaLayerParams::init(d, c, 5, 2, 4, &mut rng)?;
            let fmap = uniform(&mut rng, &[6, 5, c], -2.0, 2.0, true);
            let qc = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let qv = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let refs: Vec<[f64; 2]> =
                (0..q).map(|_| [rng.random_range(0..6usize) as f64, rng.random_range(0..5usize) as f64]).collect();
            let w = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            let mut leaves = vec![fmap.clone(), qc.clone(), qv.clone()];
            leaves.extend(layer.parameters());
            Instance {
                leaves,
                loss: Box::new(move || weighted_sum(&deformable_attend(&layer, &fmap, &qc, &qv, &refs)?, &w)),
            }
        }
        GradModule::Gated => {
            let d = 4;
            let layer = DdaLayerParams::init(d, d, 5, 1, 1, &mut rng)?;
            let qc = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let qv = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let wc = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            let wv = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            let mut leaves = vec![qc.clone(), qv.clone()];
            leaves.extend(layer.gate_c.parameters());
            leaves.extend(layer.gate_v.parameters());
            Instance {
                leaves,
                loss: Box::new(move || {
                    let (c, v) = gated_fuse(&layer, &qc, &qv)?;
                    weighted_sum(&c, &wc)?.add(&weighted_sum(&v, &wv)?)
                }),
            }
        }
        GradModule::Agfn => {
            let c = 3;
            let params = AgfnParams::init(c, &mut rng);
            let spec = GridSpec { range_min: [0.0, -4.0, -1.0], range_max: [8.0, 4.0, 1.0], voxel_size: [1.0; 3] };
            let camera = CameraModel::looking_at_yaw("cam", 0.0, [6, 4], 8.0, 24.0);
            let dims = spec.dims();
            let mut indices: Vec<[usize; 3]> = Vec::new();
            while indices.len() < q {
                let idx = [rng.random_range(1..dims[0]), rng.random_range(0..dims[1]), rng.random_range(0..dims[2])];
                if !indices.contains(&idx) {
                    indices.push(idx);
                }
            }
            let feats = uniform(&mut rng, &[q, c], -2.0, 2.0, true);
            let image = uniform(&mut rng, &[6, 4, c], -2.0, 2.0, true);
            let w = uniform(&mut rng, &[6, 4, c], -1.0, 1.0, false);
            let mut leaves = vec![feats.clone(), image.clone()];
            leaves.extend(params.parameters());
            Instance {
                leaves,
                loss: Box::new(move || {
                    let grid = SparseVoxelGrid::from_parts(spec.clone(), indices.clone(), feats.clone())?;
                    let fmap = FeatureMap2D::new(camera.clone(), image.clone())?;
                    weighted_sum(&agfn(&params, &grid, &fmap)?.features, &w)
                }),
            }
        }
        GradModule::DdaChain => {
            let (d, c) = (4, 3);
            let layer = DdaLayerParams::init(d, c, 5, 2, rng.random_range(1..=4usize), &mut rng)?;
            let depth = uniform(&mut rng, &[q], 0.0, 10.0, true);
            let fmap = uniform(&mut rng, &[6, 5, c], -2.0, 2.0, true);
            let qc = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let qv = uniform(&mut rng, &[q, d], -2.0, 2.0, true);
            let refs: Vec<[f64; 2]> =
                (0..q).map(|_| [rng.random_range(0..6usize) as f64, rng.random_range(0..5usize) as f64]).collect();
            let wc = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            let wv = uniform(&mut rng, &[q, d], -1.0, 1.0, false);
            let mut leaves = vec![depth.clone(), fmap.clone(), qc.clone(), qv.clone()];
            leaves.extend(layer.parameters());
            Instance {
                leaves,
                loss: Box::new(move || {
                    let pe = depth_pe(&depth, d)?;
                    let (qc, qv) = (qc.add(&pe)?, qv.add(&pe)?);
                    let attended = deformable_attend(&layer, &fmap, &qc, &qv, &refs)?;
                    let (c2, v2) = gated_fuse(&layer, &attended, &qv)?;
                    weighted_sum(&c2, &wc)?.add(&weighted_sum(&v2, &wv)?)
                }),
            }
        }
    })
}

/// Outcome of checking one module over a range of seeds.
#[derive(Clone, Debug)]
pub struct GradSuiteResult {
    pub module: GradModule,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
}

/// Max relative error between reverse-mode and central-difference
/// gradients of one seeded instance, over all inputs and parameters.
pub fn gradcheck_instance(module: GradModule, seed: u64, config: GradCheckConfig) -> Result<(f64, usize)> {
    let inst = instance(module, seed)?;
    let report = check_gradients(&inst.loss, &inst.leaves, config)?;
    Ok((report.max_rel_error, report.checked))
}

pub fn gradcheck_suite(module: GradModule, seeds: std::ops::Range<u64>, config: GradCheckConfig) -> Result<GradSuiteResult> {
    let mut result = GradSuiteResult { module, instances: 0, checked: 0, max_rel_error: 0.0, worst_seed: seeds.start };
    for seed in seeds {
        let (err, checked) = gradcheck_instance(module, seed, config)?;
        result.instances += 1;
        result.checked += checked;
        if err > result.max_rel_error {
            result.max_rel_error = err;
            result.worst_seed = seed;
        }
    }
    Ok(result)
}
