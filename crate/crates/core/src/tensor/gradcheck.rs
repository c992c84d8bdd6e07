//! Central finite differences, used as the independent oracle for every
//! backward rule in the crate.

use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`:
/// `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h` for every element `i`.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let base = x.to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] = base[i] + h;
        let plus = f(&Tensor::new(probe.clone(), x.shape())?)?.item()?;
        probe[i] = base[i] - h;
        let minus = f(&Tensor::new(probe, x.shape())?)?.item()?;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(grad, x.shape())
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor for the relative error, so gradients that are
    /// analytically ~0 are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, floor: 1e-3 }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (leaf index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `loss_fn` with respect to `leaves`
/// against central differences obtained by perturbing each leaf in place.
///
/// `loss_fn` must rebuild its graph from the current leaf values on every
/// call.
pub fn check_gradients<F>(mut loss_fn: F, leaves: &[Tensor], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for leaf in leaves {
        if !leaf.requires_grad() || !leaf.is_leaf() {
            return Err(Error::invalid("gradient check needs grad-tracking leaf tensors"));
        }
        leaf.clear_grad();
    }
    loss_fn()?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let h = config.step;
    let mut numeric = Vec::with_capacity(leaves.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: Vec::new(),
        numeric: Vec::new(),
        checked: 0,
    };
    for (li, leaf) in leaves.iter().enumerate() {
        let mut g = Vec::with_capacity(leaf.numel());
        for i in 0..leaf.numel() {
            let original = leaf.data()[i];
            leaf.data_mut()[i] = original + h;
            let plus = loss_fn().and_then(|l| l.item());
            leaf.data_mut()[i] = original - h;
            let minus = loss_fn().and_then(|l| l.item());
            leaf.data_mut()[i] = original;
            let n = (plus? - minus?) / (2.0 * h);
            let err = relative_error(analytic[li][i], n, config.floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (li, i);
            }
            report.checked += 1;
            g.push(n);
        }
        numeric.push(g);
    }
    for leaf in leaves {
        leaf.clear_grad();
    }
    report.analytic = analytic;
    report.numeric = numeric;
    Ok(report)
}
