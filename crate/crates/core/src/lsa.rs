//! Local self-attention over radius groups of v-queries.
//!
//! Inside one group with features `f` and positions `x`:
//!
//! ```text
//! q = f W_q,  k = f W_k,  v = f W_v
//! a_ij = softmax_j(q_i · k_j / sqrt(d) + PE(x_i - x_j))
//! f_i <- f_i + FFN(sum_j a_ij v_j)
//! ```
//!
//! with `PE` a small FFN from a 3D offset to a scalar score bias.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::sampling::Grouping;
use crate::tensor::{Ffn, LinearLayer, Module, Tensor};

#[derive(Clone, Debug)]
pub struct LsaLayer {
    pub w_q: LinearLayer,
    pub w_k: LinearLayer,
    pub w_v: LinearLayer,
    /// Output FFN, `d -> hidden -> d`.
    pub ffn: Ffn,
    /// Relative position encoder, `3 -> hidden -> 1`.
    pub pe_ffn: Ffn,
}

impl LsaLayer {
    pub fn init(d_model: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LsaLayer {
            w_q: LinearLayer::init(d_model, d_model, false, rng),
            w_k: LinearLayer::init(d_model, d_model, false, rng),
            w_v: LinearLayer::init(d_model, d_model, false, rng),
            ffn: Ffn::init(&[d_model, hidden, d_model], rng),
            pe_ffn: Ffn::init(&[3, hidden, 1], rng),
        }
    }

    /// Identity projections with all FFN weights zero.
    pub fn identity(d_model: usize, hidden: usize) -> Self {
        LsaLayer {
            w_q: LinearLayer::identity(d_model, false),
            w_k: LinearLayer::identity(d_model, false),
            w_v: LinearLayer::identity(d_model, false),
            ffn: Ffn::zeros(&[d_model, hidden, d_model]),
            pe_ffn: Ffn::zeros(&[3, hidden, 1]),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.in_features()
    }
}

impl Module for LsaLayer {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.w_q.parameters();
        p.extend(self.w_k.parameters());
        p.extend(self.w_v.parameters());
        p.extend(self.ffn.parameters());
        p.extend(self.pe_ffn.parameters());
        p
    }
}

#[derive(Clone, Debug)]
pub struct LsaParams {
    pub layers: Vec<LsaLayer>,
}

impl LsaParams {
    pub fn init(d_model: usize, hidden: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        LsaParams {
            layers: (0..num_layers).map(|_| LsaLayer::init(d_model, hidden, rng)).collect(),
        }
    }

    pub fn identity(d_model: usize, hidden: usize, num_layers: usize) -> Self {
        LsaParams {
            layers: (0..num_layers).map(|_| LsaLayer::identity(d_model, hidden)).collect(),
        }
    }
}

impl Module for LsaParams {
    fn parameters(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(Module::parameters).collect()
    }
}

/// Scalar positional bias for one ordered pair.
pub fn relative_pe(pe_ffn: &Ffn, xi: &Point3, xj: &Point3) -> Result<Tensor> {
    let diff = Tensor::new(vec![xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]], &[1, 3])?;
    pe_ffn.forward(&diff)?.reshape(&[])
}

/// `[K, K]` matrix of `PE(x_i - x_j)`.
pub fn relative_pe_matrix(pe_ffn: &Ffn, positions: &[Point3]) -> Result<Tensor> {
    if pe_ffn.out_features() != 1 {
        return Err(Error::invalid("positional FFN must produce one value per pair"));
    }
    let k = positions.len();
    let mut diffs = Vec::with_capacity(k * k * 3);
    for xi in positions {
        for xj in positions {
            diffs.extend([xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]]);
        }
    }
    pe_ffn.forward(&Tensor::new(diffs, &[k * k, 3])?)?.reshape(&[k, k])
}

/// One attention layer over a single group; returns the updated features and
/// the `[K, K]` attention matrix.
pub fn lsa_group_attention(layer: &LsaLayer, features: &Tensor, positions: &[Point3]) -> Result<(Tensor, Tensor)> {
    let d = layer.d_model();
    if features.rank() != 2 || features.shape()[1] != d || features.shape()[0] != positions.len() {
        return Err(Error::shape("lsa group", features.shape(), &[positions.len(), d]));
    }
    if positions.is_empty() {
        return Err(Error::invalid("empty attention group"));
    }
    let q = layer.w_q.forward(features)?;
    let k = layer.w_k.forward(features)?;
    let v = layer.w_v.forward(features)?;
    let scores = q
        .matmul(&k.transpose()?)?
        .scale(1.0 / (d as f64).sqrt())
        .add(&relative_pe_matrix(&layer.pe_ffn, positions)?)?;
    let attn = scores.softmax(1)?;
    let y = attn.matmul(&v)?;
    let out = features.add(&layer.ffn.forward(&y)?)?;
    Ok((out, attn))
}

pub fn lsa_group_layer(layer: &LsaLayer, features: &Tensor, positions: &[Point3]) -> Result<Tensor> {
    lsa_group_attention(layer, features, positions).map(|(out, _)| out)
}

/// Applies every layer to every group of `features` (`[Q, d]`). Voxels in
/// several groups take the mean of their group-wise updates; voxels in no
/// group pass through unchanged.
pub fn run_lsa(features: &Tensor, centers: &[Point3], grouping: &Grouping, params: &LsaParams) -> Result<Tensor> {
    let q = centers.len();
    if features.rank() != 2 || features.shape()[0] != q {
        return Err(Error::shape("run_lsa", features.shape(), &[q]));
    }
    if grouping.groups.iter().all(|g| g.is_empty()) {
        return Ok(features.clone());
    }
    let d = features.shape()[1];

    let mut counts = vec![0usize; q];
    for &m in grouping.groups.iter().flatten() {
        if m >= q {
            return Err(Error::invalid(format!("group member {m} out of range for {q} voxels")));
        }
        counts[m] += 1;
    }
    let mut inv_count = Vec::with_capacity(q * d);
    let mut keep = Vec::with_capacity(q * d);
    for &c in &counts {
        let (a, b) = if c == 0 { (0.0, 1.0) } else { (1.0 / c as f64, 0.0) };
        inv_count.extend(std::iter::repeat_n(a, d));
        keep.extend(std::iter::repeat_n(b, d));
    }
    let inv_count = Tensor::new(inv_count, &[q, d])?;
    let keep = Tensor::new(keep, &[q, d])?;

    let mut f = features.clone();
    for layer in &params.layers {
        let mut updates = Vec::with_capacity(grouping.groups.len());
        let mut rows = Vec::new();
        for members in grouping.groups.iter().filter(|g| !g.is_empty()) {
            let positions: Vec<Point3> = members.iter().map(|&m| centers[m]).collect();
            updates.push(lsa_group_layer(layer, &f.index_select(members)?, &positions)?);
            rows.extend_from_slice(members);
        }
        let updates: Vec<&Tensor> = updates.iter().collect();
        let acc = Tensor::concat(&updates, 0)?.scatter_add(&rows, q)?;
        f = acc.mul(&inv_count)?.add(&f.mul(&keep)?)?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), shape).unwrap()
    }

    fn rand_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn pe_of_zero_offset_with_zero_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ffn = Ffn::init(&[3, 4, 1], &mut rng);
        for l in &ffn.layers {
            l.bias.as_ref().unwrap().data_mut().fill(0.0);
        }
        let p = [0.3, -1.0, 2.0];
        assert_eq!(relative_pe(&ffn, &p, &p).unwrap().item().unwrap(), 0.0);
        // a single zero-bias linear layer is odd: PE(a, b) = -PE(b, a)
        ffn = Ffn::from_layers(vec![LinearLayer::from_weights(vec![0.5, -2.0, 1.5], 3, 1, Some(vec![0.0])).unwrap()])
            .unwrap();
        let (a, b) = ([1.0, 2.0, 3.0], [-0.5, 0.25, 1.0]);
        let ab = relative_pe(&ffn, &a, &b).unwrap().item().unwrap();
        let ba = relative_pe(&ffn, &b, &a).unwrap().item().unwrap();
        assert_eq!(ab, -ba);
    }

    #[test]
    fn pe_matches_unrolled_ffn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ffn = Ffn::init(&[3, 5, 1], &mut rng);
        let (a, b) = ([0.7, -0.2, 1.1], [-1.3, 0.4, 0.05]);
        let x = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let (w1, b1) = (ffn.layers[0].weight.to_vec(), ffn.layers[0].bias.as_ref().unwrap().to_vec());
        let (w2, b2) = (ffn.layers[1].weight.to_vec(), ffn.layers[1].bias.as_ref().unwrap().to_vec());
        let mut out = b2[0];
        for h in 0..5 {
            let mut z = b1[h];
            for i in 0..3 {
                z += w1[h * 3 + i] * x[i];
            }
            out += w2[h] * z.max(0.0);
        }
        let got = relative_pe(&ffn, &a, &b).unwrap().item().unwrap();
        assert!((got - out).abs() < 1e-14);
    }

    #[test]
    fn single_member_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = LsaLayer::init(4, 6, &mut rng);
        let f = rand_tensor(&mut rng, &[1, 4]);
        let out = lsa_group_layer(&layer, &f, &[[1.0, 2.0, 3.0]]).unwrap();
        let expect = f.add(&layer.ffn.forward(&layer.w_v.forward(&f).unwrap()).unwrap()).unwrap();
        assert_eq!(out.to_vec(), expect.to_vec());
    }

    #[test]
    fn zero_features_zero_bias_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = LsaLayer::init(4, 6, &mut rng);
        for p in layer.ffn.parameters().iter().chain(layer.pe_ffn.parameters().iter()) {
            if p.rank() == 1 {
                p.data_mut().fill(0.0);
            }
        }
        let out = lsa_group_layer(&layer, &Tensor::zeros(&[3, 4]), &rand_points(&mut rng, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let layer = LsaLayer::init(d, 5, &mut rng);
        let f = rand_tensor(&mut rng, &[3, d]);
        let pos = rand_points(&mut rng, 3);
        let (out, attn) = lsa_group_attention(&layer, &f, &pos).unwrap();

        let proj = |l: &LinearLayer| l.forward(&f).unwrap().to_vec();
        let (q, k, v) = (proj(&layer.w_q), proj(&layer.w_k), proj(&layer.w_v));
        let mut y = vec![0.0; 3 * d];
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| {
                    let dot: f64 = (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum();
                    dot / (d as f64).sqrt() + relative_pe(&layer.pe_ffn, &pos[i], &pos[j]).unwrap().item().unwrap()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let row_sum: f64 = (0..3).map(|j| attn.at(&[i, j])).sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert!((attn.at(&[i, j]) - e[j] / z).abs() < 1e-14);
                for c in 0..d {
                    y[i * d + c] += e[j] / z * v[j * d + c];
                }
            }
        }
        let y = Tensor::new(y, &[3, d]).unwrap();
        let expect = f.add(&layer.ffn.forward(&y).unwrap()).unwrap();
        for (a, b) in out.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_grouping_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = LsaParams::init(4, 4, 2, &mut rng);
        let f = rand_tensor(&mut rng, &[5, 4]);
        let out = run_lsa(&f, &rand_points(&mut rng, 5), &Grouping::empty(), &params).unwrap();
        assert_eq!(out.to_vec(), f.to_vec());
    }

    #[test]
    fn one_group_over_everything_is_repeated_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = LsaParams::init(4, 4, 2, &mut rng);
        let f = rand_tensor(&mut rng, &[5, 4]);
        let pos = rand_points(&mut rng, 5);
        let out = run_lsa(&f, &pos, &Grouping::single((0..5).collect()), &params).unwrap();
        let mut expect = f.clone();
        for layer in &params.layers {
            expect = lsa_group_layer(layer, &expect, &pos).unwrap();
        }
        assert_eq!(out.to_vec(), expect.to_vec());
    }

    #[test]
    fn overlapping_groups_average_and_ungrouped_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = LsaParams::init(3, 4, 1, &mut rng);
        let f = rand_tensor(&mut rng, &[4, 3]);
        let pos = rand_points(&mut rng, 4);
        let grouping = Grouping { centroids: vec![0, 2], groups: vec![vec![0, 1], vec![1, 2]] };
        let out = run_lsa(&f, &pos, &grouping, &params).unwrap();

        let layer = &params.layers[0];
        let g1 = lsa_group_layer(layer, &f.index_select(&[0, 1]).unwrap(), &[pos[0], pos[1]]).unwrap();
        let g2 = lsa_group_layer(layer, &f.index_select(&[1, 2]).unwrap(), &[pos[1], pos[2]]).unwrap();
        for c in 0..3 {
            assert!((out.at(&[0, c]) - g1.at(&[0, c])).abs() < 1e-12);
            let mean = (g1.at(&[1, c]) + g2.at(&[0, c])) / 2.0;
            assert!((out.at(&[1, c]) - mean).abs() < 1e-12);
            assert!((out.at(&[2, c]) - g2.at(&[1, c])).abs() < 1e-12);
            assert_eq!(out.at(&[3, c]), f.at(&[3, c]));
        }
    }
}
