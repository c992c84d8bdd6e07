//! Acceptance gate: eight end-to-end criteria, one PASS/FAIL line each.
//! Runs as a plain binary so the lines show up in `cargo test` output.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dualfusion::dda::{deformable_attend_detailed, depth_pe_values, DdaLayerParams};
use dualfusion::geometry::{to_bev, CameraModel, GridSpec, Point3, PointCloud, SparseVoxelGrid};
use dualfusion::lsa::{lsa_group_attention, LsaLayer};
use dualfusion::pipeline::diagnostics::{gradcheck_suite, GradModule};
use dualfusion::pipeline::io::{decode_tensor, dump_tensor, encode_tensor, load_tensor};
use dualfusion::pipeline::{overfit_probe, run_pipeline, run_with_model, synth_scene, FusionModel, PipelineConfig, SceneInput};
use dualfusion::sampling::{distance, farthest_point_sample, group_points, GroupSpec};
use dualfusion::tensor::gradcheck::GradCheckConfig;
use dualfusion::tensor::{LinearLayer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances
const GRAD_REL_TOL: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-3;
const GRAD_SEEDS: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const NORM_TOL: f64 = 1e-12;
const NORM_INSTANCES: u64 = 100;
const ORACLE_TOL: f64 = 1e-12;
const CHAIN_TOL: f64 = 1e-12;
const FPS_INSTANCES: u64 = 100;
const FPS_MAX_POINTS: usize = 200;
const GEOM_POINTS: usize = 10_000;
const PROJ_TOL: f64 = 1e-9;
const MASS_TOL: f64 = 1e-12;
const PROBE_STEPS: usize = 200;
const PROBE_RATIO: f64 = 0.1;
const PROBE_MAX_JUMP: f64 = 2.0;
const PROBE_BUDGET: Duration = Duration::from_secs(300);

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(rand_vec(rng, shape.iter().product(), -2.0, 2.0), shape).unwrap()
}

// 1. gradient suite

fn gradient_suite() -> Check {
    let start = Instant::now();
    let config = GradCheckConfig { step: GRAD_STEP, floor: GRAD_FLOOR };
    let mut lines = Vec::new();
    for module in GradModule::ALL {
        let r = ok(gradcheck_suite(module, 0..GRAD_SEEDS, config))?;
        ensure!(
            r.max_rel_error < GRAD_REL_TOL,
            "{module}: max rel error {:.2e} at seed {}",
            r.max_rel_error,
            r.worst_seed
        );
        lines.push(format!("{module} {:.1e}", r.max_rel_error));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < GRAD_BUDGET, "took {elapsed:?}");
    Ok(format!("{} seeds each, {} in {:.1}s", GRAD_SEEDS, lines.join(", "), elapsed.as_secs_f64()))
}

// 2. normalisation

fn normalisation_suite() -> Check {
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    let mut check_rows = |w: &[f64], k: usize| -> Result<(), String> {
        for row in w.chunks(k) {
            ensure!(row.iter().all(|&a| (0.0..=1.0).contains(&a)), "weight outside [0, 1]: {row:?}");
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
        Ok(())
    };
    for seed in 0..NORM_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = rng.random_range(1..=2usize);
        let keys = rng.random_range(1..=4usize);
        let q = rng.random_range(1..=4usize);
        let layer = ok(DdaLayerParams::init(4, 3, 6, heads, keys, &mut rng))?;
        // large logits stress the max subtraction
        let qc = rand_tensor(&mut rng, &[q, 4]).scale(10.0);
        let qv = rand_tensor(&mut rng, &[q, 4]).scale(10.0);
        let refs: Vec<[f64; 2]> = (0..q).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..4.0)]).collect();
        let out = ok(deformable_attend_detailed(&layer, &rand_tensor(&mut rng, &[5, 4, 3]), &qc, &qv, &refs))?;
        check_rows(&out.weights.to_vec(), keys)?;

        let k = rng.random_range(1..=8usize);
        let lsa = LsaLayer::init(4, 6, &mut rng);
        let pos: Vec<Point3> = (0..k).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let (_, attn) = ok(lsa_group_attention(&lsa, &rand_tensor(&mut rng, &[k, 4]).scale(5.0), &pos))?;
        check_rows(&attn.to_vec(), k)?;
    }
    ensure!(worst <= NORM_TOL, "row sum off by {worst:e}");
    Ok(format!("{rows} rows over {NORM_INSTANCES} instances, max |sum - 1| = {worst:.1e}"))
}

// 3. oracle equivalence

fn linear_oracle(l: &LinearLayer, x: &[f64]) -> Vec<f64> {
    let w = l.weight.to_vec();
    let b = l.bias.as_ref().map(Tensor::to_vec);
    (0..l.out_features())
        .map(|o| {
            let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..l.in_features() {
                acc += w[o * l.in_features() + i] * x[i];
            }
            acc
        })
        .collect()
}

fn ffn_oracle(layers: &[LinearLayer], x: &[f64]) -> Vec<f64> {
    let mut h = linear_oracle(&layers[0], x);
    for l in &layers[1..] {
        let relu: Vec<f64> = h.iter().map(|v| v.max(0.0)).collect();
        h = linear_oracle(l, &relu);
    }
    h
}

/// Four-corner bilinear formula with zero padding.
fn bilinear_oracle(map: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let (w, h, c) = (map.shape()[0] as i64, map.shape()[1] as i64, map.shape()[2]);
    let (u0, v0) = (u.floor(), v.floor());
    let (fu, fv) = (u - u0, v - v0);
    let corner = |i: i64, j: i64, ch: usize| {
        if i < 0 || j < 0 || i >= w || j >= h {
            0.0
        } else {
            map.at(&[i as usize, j as usize, ch])
        }
    };
    let (i, j) = (u0 as i64, v0 as i64);
    (0..c)
        .map(|ch| {
            (1.0 - fu) * (1.0 - fv) * corner(i, j, ch)
                + fu * (1.0 - fv) * corner(i + 1, j, ch)
                + (1.0 - fu) * fv * corner(i, j + 1, ch)
                + fu * fv * corner(i + 1, j + 1, ch)
        })
        .collect()
}

fn oracle_equivalence() -> Check {
    let mut worst: f64 = 0.0;
    let mut bilinear_worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (heads, keys) = (rng.random_range(1..=2usize), rng.random_range(1..=4usize));
        let (d, c, q) = (4, 3, rng.random_range(1..=4usize));
        let layer = ok(DdaLayerParams::init(d, c, 5, heads, keys, &mut rng))?;
        let fmap = rand_tensor(&mut rng, &[6, 5, c]);
        let qc = rand_tensor(&mut rng, &[q, d]);
        let qv = rand_tensor(&mut rng, &[q, d]);
        let refs: Vec<[f64; 2]> = (0..q).map(|_| [rng.random_range(0.0..6.0), rng.random_range(0.0..5.0)]).collect();
        let got = ok(deformable_attend_detailed(&layer, &fmap, &qc, &qv, &refs))?.output;

        for b in 0..q {
            let qcb: Vec<f64> = (0..d).map(|i| qc.at(&[b, i])).collect();
            let sum: Vec<f64> = (0..d).map(|i| qc.at(&[b, i]) + qv.at(&[b, i])).collect();
            let offsets = ffn_oracle(&layer.offset_ffn.layers, &qcb);
            let logits = ffn_oracle(&layer.weight_ffn.layers, &sum);
            let mut out = vec![0.0; d];
            for m in 0..heads {
                let row = &logits[m * keys..(m + 1) * keys];
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|l| (l - mx).exp()).sum();
                let mut head = vec![0.0; d];
                for k in 0..keys {
                    let a = (row[k] - mx).exp() / z;
                    let o = &offsets[(m * keys + k) * 2..(m * keys + k) * 2 + 2];
                    let sample = bilinear_oracle(&fmap, refs[b][0] + o[0], refs[b][1] + o[1]);
                    let value = linear_oracle(&layer.value_proj[m], &sample);
                    let proj = linear_oracle(&layer.out_proj[m], &value);
                    for i in 0..d {
                        head[i] += a * proj[i];
                    }
                }
                for i in 0..d {
                    out[i] += head[i];
                }
            }
            for i in 0..d {
                worst = worst.max((got.at(&[b, i]) - out[i]).abs());
            }
        }

        let pts = Tensor::new(rand_vec(&mut rng, 16, -1.5, 7.5), &[8, 2]).unwrap();
        let sampled = ok(fmap.bilinear_sample(&pts))?;
        for n in 0..8 {
            let exp = bilinear_oracle(&fmap, pts.at(&[n, 0]), pts.at(&[n, 1]));
            for ch in 0..c {
                bilinear_worst = bilinear_worst.max((sampled.at(&[n, ch]) - exp[ch]).abs());
            }
        }
    }
    ensure!(worst <= ORACLE_TOL, "deformable output differs by {worst:e}");
    ensure!(bilinear_worst <= ORACLE_TOL, "bilinear sample differs by {bilinear_worst:e}");
    Ok(format!("deformable max diff {worst:.1e}, bilinear max diff {bilinear_worst:.1e}"))
}

// 4. identity chain

fn identity_chain() -> Check {
    let mut cfg = PipelineConfig::toy();
    let d = 8;
    cfg.d_model = d;
    cfg.camera_channels = d;
    cfg.voxel_channels = d;
    cfg.dda.heads = 1;
    let layers = cfg.dda.layers as f64;
    let model = ok(FusionModel::identity(&cfg))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cam = CameraModel::looking_at_yaw("front", 0.0, cfg.image_size, cfg.stride, cfg.focal_px);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = [rng.random_range(2.0..8.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
        let f = rand_vec(&mut rng, d, -2.0, 2.0);
        let [w, h] = cfg.image_size;
        let image = rand_tensor(&mut rng, &[w, h, d]);
        let scene = SceneInput {
            cloud: ok(PointCloud::new(vec![p], f.clone(), d))?,
            cameras: vec![cam.clone()],
            images: vec![image.clone()],
        };
        let out = ok(run_with_model(&cfg, &model, &scene))?;
        ensure!(out.report.voxels == 1 && out.report.valid_queries == 1, "expected one valid voxel");

        let idx = cfg.grid.index_of(&p).unwrap();
        let center = cfg.grid.center(idx);
        let [u, v] = cam.project(&center).pixel().ok_or("voxel not visible")?;
        let pe = ok(depth_pe_values(center[0], d))?;
        for ch in 0..d {
            // averaging AGFN, then each layer adds the depth encoding and
            // half the sampled camera feature through the σ(0) gate
            let enhanced = 0.5 * (f[ch] + image.at(&[u, v, ch]));
            let expected = f[ch] + layers * (pe[ch] + 0.5 * enhanced);
            let got = out.bev.at(&[idx[0], idx[1], idx[2] * d + ch]);
            worst = worst.max((got - expected).abs());
        }
        let nonzero = out.bev.data().iter().filter(|v| **v != 0.0).count();
        ensure!(nonzero <= d, "{nonzero} non-zero BEV entries for one voxel");
    }
    ensure!(worst <= CHAIN_TOL, "closed form differs by {worst:e}");
    Ok(format!("10 scenes, {} layers, max diff {worst:.1e}", cfg.dda.layers))
}

// 5. FPS and grouping

fn fps_grouping_suite() -> Check {
    let mut steps = 0;
    for seed in 0..FPS_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let n = rng.random_range(1..=FPS_MAX_POINTS);
        let mut pts: Vec<Point3> =
            (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0))).collect();
        if n > 4 {
            // duplicates force ties
            pts[n - 1] = pts[0];
            pts[n - 2] = pts[1];
        }
        let t = rng.random_range(1..=n + 3);
        let sel = ok(farthest_point_sample(&pts, t, 0))?;
        ensure!(sel.len() == t.min(n) && sel[0] == 0, "seed {seed}: bad selection size or start");
        // exhaustive recheck of the greedy step
        for s in 1..sel.len() {
            let min_to = |i: usize| sel[..s].iter().map(|&j| distance(&pts[i], &pts[j])).fold(f64::INFINITY, f64::min);
            let chosen = min_to(sel[s]);
            for i in (0..n).filter(|i| !sel[..s].contains(i)) {
                let di = min_to(i);
                ensure!(di <= chosen, "seed {seed} step {s}: point {i} is farther ({di} > {chosen})");
                ensure!(di < chosen || i >= sel[s], "seed {seed} step {s}: tie not broken by lowest index");
            }
            steps += 1;
        }
        let spec = GroupSpec {
            centroids: rng.random_range(1..=16),
            radius: rng.random_range(0.5..4.0),
            max_members: rng.random_range(1..=12),
            seed,
            random_start: seed % 2 == 1,
        };
        let g = ok(group_points(&pts, &spec))?;
        ensure!(g == ok(group_points(&pts, &spec))?, "seed {seed}: grouping not deterministic");
        for (c, members) in g.centroids.iter().zip(&g.groups) {
            ensure!(members.len() <= spec.max_members, "seed {seed}: group larger than K");
            for &m in members {
                ensure!(distance(&pts[*c], &pts[m]) <= spec.radius, "seed {seed}: member {m} outside R");
            }
            let in_radius = (0..n).filter(|&i| distance(&pts[*c], &pts[i]) <= spec.radius).count();
            ensure!(members.len() == in_radius.min(spec.max_members), "seed {seed}: group size wrong");
        }
    }
    Ok(format!("{FPS_INSTANCES} instances, {steps} greedy steps rechecked"))
}

// 6. geometry

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn geometry_suite() -> Check {
    let spec = GridSpec::kitti();
    ensure!(spec.dims() == [1408, 1600, 40], "KITTI dims {:?}", spec.dims());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut inside = 0;
    for _ in 0..GEOM_POINTS {
        let p = [rng.random_range(-2.0..72.0), rng.random_range(-42.0..42.0), rng.random_range(-3.5..1.5)];
        let expected: Option<[usize; 3]> = {
            let f: Vec<f64> = (0..3).map(|a| ((p[a] - spec.range_min[a]) / spec.voxel_size[a]).floor()).collect();
            let in_range = (0..3).all(|a| p[a] >= spec.range_min[a] && p[a] < spec.range_max[a]);
            in_range.then(|| [f[0] as usize, f[1] as usize, f[2] as usize])
        };
        ensure!(spec.index_of(&p) == expected, "point {p:?}: {:?} vs {expected:?}", spec.index_of(&p));
        inside += expected.is_some() as usize;
    }

    let mut worst: f64 = 0.0;
    let mut visible = 0;
    for _ in 0..200 {
        let r = rotation(std::array::from_fn(|_| rng.random_range(-1.0..1.0)), rng.random_range(-3.0..3.0));
        let r0 = rotation(std::array::from_fn(|_| rng.random_range(-1.0..1.0)), rng.random_range(-0.05..0.05));
        let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let mut extr = [[0.0; 4]; 4];
        let mut rect = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                extr[i][j] = r[i][j];
                rect[i][j] = r0[i][j];
            }
            extr[i][3] = t[i];
        }
        extr[3][3] = 1.0;
        rect[3][3] = 1.0;
        let (fx, fy) = (rng.random_range(200.0..900.0), rng.random_range(200.0..900.0));
        let k = [[fx, rng.random_range(-1.0..1.0), rng.random_range(300.0..700.0)], [0.0, fy, rng.random_range(100.0..300.0)], [0.0, 0.0, 1.0]];
        let cam = CameraModel {
            id: "rand".into(),
            intrinsics: k,
            extrinsics: extr,
            rectification: rect,
            image_size: [156, 47],
            stride: 8.0,
            yaw_offset: 0.0,
        };
        ok(cam.validate())?;
        for _ in 0..20 {
            let p: Point3 = std::array::from_fn(|_| rng.random_range(-30.0..30.0));
            // rect · extr · p, then K, then perspective division and stride
            let mut e = [0.0; 4];
            for i in 0..4 {
                e[i] = extr[i][0] * p[0] + extr[i][1] * p[1] + extr[i][2] * p[2] + extr[i][3];
            }
            let mut cp = [0.0; 4];
            for i in 0..4 {
                cp[i] = (0..4).map(|j| rect[i][j] * e[j]).sum();
            }
            let pix: Vec<f64> = (0..3).map(|i| (0..3).map(|j| k[i][j] * cp[j]).sum()).collect();
            let (u, v) = (pix[0] / pix[2] / 8.0, pix[1] / pix[2] / 8.0);
            let proj = cam.project(&p);
            let valid = cp[2] > 0.0 && (0.0..156.0).contains(&u) && (0.0..47.0).contains(&v);
            ensure!(proj.valid == valid, "validity mismatch at {p:?}");
            if cp[2] > 1e-3 {
                let scale = u.abs().max(v.abs()).max(1.0);
                worst = worst.max((proj.p2d[0] - u).abs().max((proj.p2d[1] - v).abs()) / scale);
            }
            visible += valid as usize;
        }
    }
    ensure!(worst <= PROJ_TOL, "projection differs by {worst:e}");

    let mut mass_worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let g = GridSpec { range_min: [0.0, -4.0, -2.0], range_max: [8.0, 4.0, 2.0], voxel_size: [0.5, 0.5, 1.0] };
        let dims = g.dims();
        let mut idx: Vec<[usize; 3]> = (0..60)
            .map(|_| [rng.random_range(0..dims[0]), rng.random_range(0..dims[1]), rng.random_range(0..dims[2])])
            .collect();
        idx.sort();
        idx.dedup();
        let c = rng.random_range(1..=4);
        let feats = rand_tensor(&mut rng, &[idx.len(), c]);
        let grid = ok(SparseVoxelGrid::from_parts(g, idx, feats.clone()))?;
        let bev = ok(to_bev(&grid))?;
        let total: f64 = feats.data().iter().sum();
        let bev_total: f64 = bev.data().iter().sum();
        mass_worst = mass_worst.max((total - bev_total).abs());
    }
    ensure!(mass_worst <= MASS_TOL, "BEV mass differs by {mass_worst:e}");
    Ok(format!(
        "{GEOM_POINTS} points ({inside} in range), projection rel diff {worst:.1e} ({visible} visible), mass diff {mass_worst:.1e}"
    ))
}

// 7. overfit probe

fn overfit() -> Check {
    let cfg = PipelineConfig::toy();
    let start = Instant::now();
    let curve = ok(overfit_probe(&cfg, cfg.seed, PROBE_STEPS, cfg.probe.lr))?;
    let elapsed = start.elapsed();
    ensure!(curve.len() == PROBE_STEPS, "curve has {} points", curve.len());
    let ratio = curve[PROBE_STEPS - 1] / curve[0];
    let jump = curve.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    ensure!(ratio < PROBE_RATIO, "final/initial = {ratio:.4}");
    ensure!(jump <= PROBE_MAX_JUMP, "a step increased the loss {jump:.2}x");
    ensure!(elapsed < PROBE_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "loss {:.4} -> {:.5} (ratio {ratio:.4}), worst step x{jump:.2}, lr {}, {:.1}s",
        curve[0],
        curve[PROBE_STEPS - 1],
        cfg.probe.lr,
        elapsed.as_secs_f64()
    ))
}

// 8. determinism and serialisation

const GOLDEN_REPORT: &str = include_str!("data/golden_report.json");

/// Configuration and scene the golden report was recorded with.
fn golden_run() -> Result<dualfusion::pipeline::PipelineOutput, String> {
    let mut cfg = PipelineConfig::toy();
    cfg.seed = 7;
    let scene = ok(synth_scene(11, 60, 3, &cfg))?;
    ok(run_pipeline(&cfg, &scene))
}

fn determinism() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let a = golden_run()?;
    let b = golden_run()?;
    ok(a.write_dumps(&dir.path().join("a")))?;
    ok(b.write_dumps(&dir.path().join("b")))?;
    let mut files = 0;
    for (name, _) in &a.stages {
        let fa = ok(std::fs::read(dir.path().join("a").join(format!("{name}.dft"))))?;
        let fb = ok(std::fs::read(dir.path().join("b").join(format!("{name}.dft"))))?;
        ensure!(fa == fb, "stage {name} differs between runs");
        files += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for rank in 0..5 {
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(0..5)).collect();
        let mut data: Vec<f64> = (0..shape.iter().product()).map(|_| rng.random_range(-1e6..1e6)).collect();
        if let Some(x) = data.first_mut() {
            *x = -0.0;
        }
        if data.len() > 1 {
            data[1] = 5e-324;
        }
        let t = ok(Tensor::new(data, &shape))?;
        let path = dir.path().join(format!("t{rank}.dft"));
        ok(dump_tensor(&t, &path))?;
        let back = ok(load_tensor(&path))?;
        let bits = |x: &Tensor| x.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(back.shape() == t.shape() && bits(&back) == bits(&t), "rank {rank} round trip not bit-exact");
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        ensure!(buf.len() == 8 + 4 + 8 * rank + 8 * t.numel(), "rank {rank}: file size {}", buf.len());
        ensure!(bits(&ok(decode_tensor(&buf))?) == bits(&t), "rank {rank}: in-memory round trip");
    }

    let report = a.report.to_json();
    ensure!(report == b.report.to_json(), "reports differ between runs");
    if std::env::var_os("BLESS_GOLDEN").is_some() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_report.json");
        ok(std::fs::write(path, &report))?;
    } else {
        ensure!(report == GOLDEN_REPORT, "report differs from golden file:\n{report}");
    }
    Ok(format!("{files} stage dumps identical, 5 round trips exact, golden report matches"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient suite", gradient_suite),
        ("normalisation", normalisation_suite),
        ("oracle equivalence", oracle_equivalence),
        ("identity chain", identity_chain),
        ("FPS and grouping", fps_grouping_suite),
        ("geometry", geometry_suite),
        ("overfit probe", overfit),
        ("determinism and serialisation", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
