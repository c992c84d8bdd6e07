use super::DdaLayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GateOutput {
    pub c: Tensor,
    pub v: Tensor,
    /// `σ(gate_c(q'_c + q'_v))`, the share of `q'_v` added to the c-query.
    pub gate_c: Tensor,
    /// `σ(gate_v(q'_c + q'_v))`, the share of `q'_c` added to the v-query.
    pub gate_v: Tensor,
}

/// Exchanges information between the two query streams with sigmoid gates
/// computed from their sum:
///
/// ```text
/// q''_c = q'_c + q'_v ⊙ σ(Conv₁(q'_c + q'_v))
/// q''_v = q'_v + q'_c ⊙ σ(Conv₂(q'_c + q'_v))
/// ```
pub fn gated_fuse_detailed(layer: &DdaLayerParams, q_c: &Tensor, q_v: &Tensor) -> Result<GateOutput> {
    if q_c.shape() != q_v.shape() {
        return Err(Error::shape("gated_fuse", q_c.shape(), q_v.shape()));
    }
    let s = q_c.add(q_v)?;
    let gate_c = layer.gate_c.forward(&s)?.sigmoid();
    let gate_v = layer.gate_v.forward(&s)?.sigmoid();
    Ok(GateOutput {
        c: q_c.add(&q_v.mul(&gate_c)?)?,
        v: q_v.add(&q_c.mul(&gate_v)?)?,
        gate_c,
        gate_v,
    })
}

pub fn gated_fuse(layer: &DdaLayerParams, q_c: &Tensor, q_v: &Tensor) -> Result<(Tensor, Tensor)> {
    gated_fuse_detailed(layer, q_c, q_v).map(|g| (g.c, g.v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), shape).unwrap()
    }

    #[test]
    fn zero_gates_mix_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DdaLayerParams::identity(4, 4, 1).unwrap();
        let c = rand_tensor(&mut rng, &[2, 4]);
        let v = rand_tensor(&mut rng, &[2, 4]);
        let (c2, v2) = gated_fuse(&layer, &c, &v).unwrap();
        for i in 0..8 {
            assert_eq!(c2.data()[i], c.data()[i] + 0.5 * v.data()[i]);
            assert_eq!(v2.data()[i], v.data()[i] + 0.5 * c.data()[i]);
        }
        let (c3, _) = gated_fuse(&layer, &c, &Tensor::zeros(&[2, 4])).unwrap();
        assert_eq!(c3.to_vec(), c.to_vec());
    }

    #[test]
    fn matches_elementwise_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DdaLayerParams::init(3, 3, 4, 1, 2, &mut rng).unwrap();
        let c = rand_tensor(&mut rng, &[2, 3]);
        let v = rand_tensor(&mut rng, &[2, 3]);
        let out = gated_fuse_detailed(&layer, &c, &v).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (w1, b1) = (layer.gate_c.weight.to_vec(), layer.gate_c.bias.as_ref().unwrap().to_vec());
        let (w2, b2) = (layer.gate_v.weight.to_vec(), layer.gate_v.bias.as_ref().unwrap().to_vec());
        let (cd, vd) = (c.to_vec(), v.to_vec());
        for r in 0..2 {
            let s: Vec<f64> = (0..3).map(|j| cd[r * 3 + j] + vd[r * 3 + j]).collect();
            for o in 0..3 {
                let z1: f64 = b1[o] + (0..3).map(|j| w1[o * 3 + j] * s[j]).sum::<f64>();
                let z2: f64 = b2[o] + (0..3).map(|j| w2[o * 3 + j] * s[j]).sum::<f64>();
                let ec = cd[r * 3 + o] + vd[r * 3 + o] * sig(z1);
                let ev = vd[r * 3 + o] + cd[r * 3 + o] * sig(z2);
                assert!((out.c.at(&[r, o]) - ec).abs() < 1e-14);
                assert!((out.v.at(&[r, o]) - ev).abs() < 1e-14);
            }
        }
        assert!(out.gate_c.data().iter().chain(out.gate_v.data().iter()).all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn shape_mismatch() {
        let layer = DdaLayerParams::identity(2, 2, 1).unwrap();
        assert!(gated_fuse(&layer, &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[2, 2])).is_err());
    }
}
