use super::Tensor;
use crate::error::{Error, Result};

/// Plain gradient descent: `p <- p - lr * grad`, then zeroes the grads.
pub fn sgd_step(params: &[Tensor], lr: f64) -> Result<()> {
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::MissingGrad { index });
    }
    for p in params {
        let mut grad = p.grad_mut();
        let g = grad.as_mut().expect("checked above");
        p.data_mut().iter_mut().zip(g.iter()).for_each(|(v, g)| *v -= lr * g);
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        p.scale(2.0).sum().backward().unwrap();
        sgd_step(&[p.clone()], 0.1).unwrap();
        assert!((p.to_vec()[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let p = Tensor::param(vec![1.5, -2.0], &[2]).unwrap();
        p.mul(&p).unwrap().sum().backward().unwrap();
        sgd_step(&[p.clone()], 0.0).unwrap();
        assert_eq!(p.to_vec(), vec![1.5, -2.0]);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        assert!(matches!(sgd_step(&[p], 0.1), Err(Error::MissingGrad { index: 0 })));
    }

    #[test]
    fn converges_on_quadratic() {
        // (p - 3)^2 with lr 0.1: error shrinks by 0.8 per step, 0.8^50 * 3 ≈ 4.3e-5
        let p = Tensor::param(vec![0.0], &[1]).unwrap();
        for _ in 0..50 {
            let d = p.add_scalar(-3.0);
            d.mul(&d).unwrap().sum().backward().unwrap();
            sgd_step(&[p.clone()], 0.1).unwrap();
        }
        assert!((p.to_vec()[0] - 3.0).abs() < 1e-3);
    }
}
