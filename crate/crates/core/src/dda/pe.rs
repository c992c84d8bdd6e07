use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn frequencies(d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let even = (j - j % 2) as f64;
            1.0 / 10000f64.powf(even / d_model as f64)
        })
        .collect()
}

/// Sinusoidal embedding of per-query depths `x` (`[Q]`) into `[Q, d_model]`:
/// entry `2i` is `sin(x / 10000^(2i/d))`, entry `2i+1` the matching cosine.
/// Differentiable with respect to `x`.
pub fn depth_pe(x: &Tensor, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::invalid(format!("depth encoding needs an even width, got {d_model}")));
    }
    if x.rank() != 1 {
        return Err(Error::invalid(format!("depths must be a vector, got shape {:?}", x.shape())));
    }
    let q = x.shape()[0];
    let freq = Tensor::new(frequencies(d_model), &[1, d_model])?;
    let angles = x.reshape(&[q, 1])?.matmul(&freq)?;
    let parity = |odd: f64| -> Result<Tensor> {
        let row: Vec<f64> = (0..d_model).map(|j| if j % 2 == 1 { odd } else { 1.0 - odd }).collect();
        Tensor::new(row.repeat(q), &[q, d_model])
    };
    angles.sin().mul(&parity(0.0)?)?.add(&angles.cos().mul(&parity(1.0)?)?)
}

/// Plain-value version for a single depth.
pub fn depth_pe_values(x: f64, d_model: usize) -> Result<Vec<f64>> {
    Ok(depth_pe(&Tensor::new(vec![x], &[1])?, d_model)?.to_vec())
}
