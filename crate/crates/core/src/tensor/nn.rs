use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Anything that owns trainable tensors.
pub trait Module {
    fn parameters(&self) -> Vec<Tensor>;
}

/// Affine map `y = x Wᵀ + b` applied to every row of an `[N, in]` input.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`; pure projections carry no bias.
    pub bias: Option<Tensor>,
}

impl LinearLayer {
    /// Uniform init in `[-1/sqrt(in), 1/sqrt(in)]` for weight and bias.
    pub fn init(input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let weight = Tensor::param(draw(output * input), &[output, input]).unwrap();
        let bias = bias.then(|| Tensor::param(draw(output), &[output]).unwrap());
        LinearLayer { weight, bias }
    }

    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        LinearLayer {
            weight: Tensor::param(vec![0.0; output * input], &[output, input]).unwrap(),
            bias: bias.then(|| Tensor::param(vec![0.0; output], &[output]).unwrap()),
        }
    }

    pub fn identity(n: usize, bias: bool) -> Self {
        Self::from_weights(Tensor::eye(n).to_vec(), n, n, bias.then(|| vec![0.0; n])).unwrap()
    }

    /// Builds a layer from row-major `[out, in]` weights.
    pub fn from_weights(
        weight: Vec<f64>,
        input: usize,
        output: usize,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let weight = Tensor::param(weight, &[output, input])?;
        let bias = bias.map(|b| Tensor::param(b, &[output])).transpose()?;
        Ok(LinearLayer { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.in_features() {
            return Err(Error::shape("linear", x.shape(), self.weight.shape()));
        }
        let y = x.matmul(&self.weight.transpose()?)?;
        match &self.bias {
            Some(b) => y.add_row(b),
            None => Ok(y),
        }
    }
}

impl Module for LinearLayer {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Clone, Debug)]
pub struct Ffn {
    pub layers: Vec<LinearLayer>,
}

impl Ffn {
    /// `dims = [in, hidden.., out]`, at least two entries.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an FFN needs at least one layer");
        Ffn {
            layers: dims.windows(2).map(|w| LinearLayer::init(w[0], w[1], true, rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an FFN needs at least one layer");
        Ffn {
            layers: dims.windows(2).map(|w| LinearLayer::zeros(w[0], w[1], true)).collect(),
        }
    }

    pub fn from_layers(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an FFN needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(Error::shape(
                    "ffn chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Ffn { layers })
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h.relu())?;
        }
        Ok(h)
    }
}

impl Module for Ffn {
    fn parameters(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(Module::parameters).collect()
    }
}
