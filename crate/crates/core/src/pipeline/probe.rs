use rand_distr::{Distribution, StandardNormal};

use super::run::{forward, prepare};
use super::{synth_scene, FusionModel, PipelineConfig};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::{sgd_step, Module, Tensor};

/// Fits every fusion weight to a fixed random BEV target on a small
/// synthetic scene with plain gradient descent on the mean-squared error.
/// `seed` drives the scene, the target and the initial weights. The output
/// head steps with `lr / d_model`, every other weight with `lr`. Returns the
/// loss before each step.
pub fn overfit_probe(config: &PipelineConfig, seed: u64, steps: usize, lr: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Config("the probe needs at least one step".into()));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::Config(format!("learning rate {lr} must be finite and non-negative")));
    }
    let mut config = config.clone();
    config.seed = seed;
    let scene = synth_scene(seed, config.probe.points, config.probe.cameras, &config)?;
    let prepared = prepare(&config, &scene)?;
    let model = FusionModel::init(&config)?;
    let head = model.voxel_out.parameters();
    let body: Vec<Tensor> = model
        .parameters()
        .into_iter()
        .filter(|p| !head.iter().any(|h| h.ptr_eq(p)))
        .collect();
    let head_lr = lr / config.d_model as f64;
    // the last layer's c-query gate never reaches the BEV; its gradient is zero
    for p in head.iter().chain(&body) {
        p.zero_grad();
    }

    // random target on the occupied BEV cells only, zero elsewhere
    let [_, l, h] = config.grid.dims();
    let c = config.voxel_channels;
    let bev_shape = forward(&model, &prepared, false)?.bev.shape().to_vec();
    let mut target = vec![0.0; bev_shape.iter().product()];
    let mut rng = rng_for(seed, "probe.target");
    for &[x, y, z] in &prepared.grid.indices {
        let base = (x * l + y) * h * c + z * c;
        for v in &mut target[base..base + c] {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    let target = Tensor::new(target, &bev_shape)?;

    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let diff = forward(&model, &prepared, false)?.bev.sub(&target)?;
        let loss = diff.mul(&diff)?.mean();
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::invalid(format!("probe diverged at step {} (lr {lr})", losses.len())));
        }
        losses.push(value);
        loss.backward()?;
        sgd_step(&body, lr)?;
        sgd_step(&head, head_lr)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_flat_and_one_step_has_one_loss() {
        let cfg = PipelineConfig::toy();
        let flat = overfit_probe(&cfg, 1, 3, 0.0).unwrap();
        assert!(flat.iter().all(|&l| l == flat[0]));
        assert_eq!(overfit_probe(&cfg, 1, 1, 0.1).unwrap().len(), 1);
        assert!(overfit_probe(&cfg, 1, 0, 0.1).is_err());
    }

    #[test]
    fn a_few_steps_reduce_the_loss() {
        let cfg = PipelineConfig::toy();
        let curve = overfit_probe(&cfg, 2, 5, cfg.probe.lr).unwrap();
        assert!(curve[4] < curve[0]);
    }
}
