use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Ffn, LinearLayer, Module, Tensor};

/// Weights of one dual-fusion layer.
#[derive(Clone, Debug)]
pub struct DdaLayerParams {
    pub heads: usize,
    pub keys: usize,
    /// `d -> hidden -> heads·keys·2` sampling offsets, from the c-query.
    pub offset_ffn: Ffn,
    /// `d -> hidden -> heads·keys` attention logits, from `q_c + q_v`.
    pub weight_ffn: Ffn,
    /// Per-head value projections `C -> d/heads` (no bias).
    pub value_proj: Vec<LinearLayer>,
    /// Per-head output projections `d/heads -> d` (no bias).
    pub out_proj: Vec<LinearLayer>,
    /// Gate producing the v-query share mixed into the c-query.
    pub gate_c: LinearLayer,
    /// Gate producing the c-query share mixed into the v-query.
    pub gate_v: LinearLayer,
}

impl DdaLayerParams {
    pub fn init(
        d_model: usize,
        feature_channels: usize,
        hidden: usize,
        heads: usize,
        keys: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::check_dims(d_model, heads, keys)?;
        let dh = d_model / heads;
        Ok(DdaLayerParams {
            heads,
            keys,
            offset_ffn: Ffn::init(&[d_model, hidden, heads * keys * 2], rng),
            weight_ffn: Ffn::init(&[d_model, hidden, heads * keys], rng),
            value_proj: (0..heads).map(|_| LinearLayer::init(feature_channels, dh, false, rng)).collect(),
            out_proj: (0..heads).map(|_| LinearLayer::init(dh, d_model, false, rng)).collect(),
            gate_c: LinearLayer::init(d_model, d_model, true, rng),
            gate_v: LinearLayer::init(d_model, d_model, true, rng),
        })
    }

    /// Single head with identity value/output projections; offset, weight
    /// and gate networks all zero.
    pub fn identity(d_model: usize, hidden: usize, keys: usize) -> Result<Self> {
        Self::check_dims(d_model, 1, keys)?;
        Ok(DdaLayerParams {
            heads: 1,
            keys,
            offset_ffn: Ffn::zeros(&[d_model, hidden, keys * 2]),
            weight_ffn: Ffn::zeros(&[d_model, hidden, keys]),
            value_proj: vec![LinearLayer::identity(d_model, false)],
            out_proj: vec![LinearLayer::identity(d_model, false)],
            gate_c: LinearLayer::zeros(d_model, d_model, true),
            gate_v: LinearLayer::zeros(d_model, d_model, true),
        })
    }

    fn check_dims(d_model: usize, heads: usize, keys: usize) -> Result<()> {
        if heads == 0 || keys == 0 {
            return Err(Error::Config("deformable attention needs at least one head and one key".into()));
        }
        if !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide d_model {d_model}")));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.gate_c.in_features()
    }
}

impl Module for DdaLayerParams {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.offset_ffn.parameters();
        p.extend(self.weight_ffn.parameters());
        for l in self.value_proj.iter().chain(&self.out_proj) {
            p.extend(l.parameters());
        }
        p.extend(self.gate_c.parameters());
        p.extend(self.gate_v.parameters());
        p
    }
}

#[derive(Clone, Debug)]
pub struct DeformableOutput {
    /// Updated c-queries `[B, d]`.
    pub output: Tensor,
    /// Normalised attention weights `[B, heads, keys]`.
    pub weights: Tensor,
    /// Sampling offsets in feature cells `[B, heads, keys, 2]`.
    pub offsets: Tensor,
}

/// Deformable attention of a batch of queries into one camera feature map
/// `[W, H, C]` around the reference cells `refs`:
///
/// ```text
/// q'_c = sum_m W_m sum_k A_mk · W'_m F(p + Δp_mk)
/// Δp = FFN_off(q_c),  A_m· = softmax_k(FFN_w(q_c + q_v))
/// ```
pub fn deformable_attend_detailed(
    layer: &DdaLayerParams,
    fmap: &Tensor,
    q_c: &Tensor,
    q_v: &Tensor,
    refs: &[[f64; 2]],
) -> Result<DeformableOutput> {
    let d = layer.d_model();
    let b = refs.len();
    if q_c.shape() != [b, d] || q_v.shape() != [b, d] {
        return Err(Error::shape("deformable_attend", q_c.shape(), q_v.shape()));
    }
    if fmap.rank() != 3 || fmap.shape()[2] != layer.value_proj[0].in_features() {
        return Err(Error::shape("deformable_attend", fmap.shape(), layer.value_proj[0].weight.shape()));
    }
    let (m, k, c) = (layer.heads, layer.keys, fmap.shape()[2]);

    let offsets = layer.offset_ffn.forward(q_c)?;
    let logits = layer.weight_ffn.forward(&q_c.add(q_v)?)?;
    let weights = logits.reshape(&[b * m, k])?.softmax(1)?;

    let base: Vec<f64> = refs
        .iter()
        .flat_map(|p| std::iter::repeat_n(*p, m * k).flatten())
        .collect();
    let locations = offsets.reshape(&[b * m * k, 2])?.add(&Tensor::new(base, &[b * m * k, 2])?)?;
    let samples = fmap.bilinear_sample(&locations)?.reshape(&[b * m, k, c])?;
    // per (query, head): sum_k A_k F(p + Δp_k)
    let pooled = weights.reshape(&[b * m, 1, k])?.bmm(&samples)?.reshape(&[b, m * c])?;

    let mut output: Option<Tensor> = None;
    for head in 0..m {
        let h = pooled.narrow(1, head * c, c)?;
        let projected = layer.out_proj[head].forward(&layer.value_proj[head].forward(&h)?)?;
        output = Some(match output {
            Some(acc) => acc.add(&projected)?,
            None => projected,
        });
    }
    Ok(DeformableOutput {
        output: output.expect("at least one head"),
        weights: weights.reshape(&[b, m, k])?,
        offsets: offsets.reshape(&[b, m, k, 2])?,
    })
}

pub fn deformable_attend(
    layer: &DdaLayerParams,
    fmap: &Tensor,
    q_c: &Tensor,
    q_v: &Tensor,
    refs: &[[f64; 2]],
) -> Result<Tensor> {
    deformable_attend_detailed(layer, fmap, q_c, q_v, refs).map(|o| o.output)
}
