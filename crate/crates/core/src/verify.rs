//! 64-bit gradient verification utilities.
//!
//! Training runs in f32; these helpers re-run graphs in f64 and compare
//! analytic gradients against central finite differences. Relative error is
//! measured against max(|analytic|, |numeric|), with elements below the
//! floor auto-passing as finite-difference noise.

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-9;

pub fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / denom
    }
}

/// Max relative error between analytic input gradients and central finite
/// differences of `f` over the given inputs.
pub fn max_rel_err_inputs(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
) -> f64 {
    assert_eq!(inputs.len(), analytic.len());
    let mut worst = 0.0f64;
    for (which, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data[e] += step;
            let mut minus = inputs.to_vec();
            minus[which].data[e] -= step;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic[which].data[e], numeric));
        }
    }
    worst
}

/// Max relative error between analytic parameter gradients and central
/// finite differences of `loss` over the store. `stride` checks every k-th
/// element of each tensor to bound cost; the first and last elements are
/// always included.
pub fn max_rel_err_params(
    loss: &dyn Fn(&ParamStore<f64>) -> f64,
    store: &ParamStore<f64>,
    analytic: &[Option<Tensor<f64>>],
    step: f64,
    stride: usize,
) -> f64 {
    let stride = stride.max(1);
    let mut worst = 0.0f64;
    for idx in 0..store.len() {
        let Some(grad) = &analytic[idx] else { continue };
        let numel = store.tensor(idx).numel();
        let mut targets: Vec<usize> = (0..numel).step_by(stride).collect();
        if numel > 0 && targets.last() != Some(&(numel - 1)) {
            targets.push(numel - 1);
        }
        for e in targets {
            let mut plus = store.clone();
            plus.tensor_mut(idx).data[e] += step;
            let mut minus = store.clone();
            minus.tensor_mut(idx).data[e] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(grad.data[e], numeric));
        }
    }
    worst
}
