use super::{ParamSet, Trainable};
use crate::error::{Error, Result};

/// Largest `|g_a − g_n| / (|g_a| + |g_n| + 1e−12)` between an analytic gradient
/// and central differences of `loss`, over every `stride`-th parameter.
pub fn check_gradient<M: ParamSet>(
    params: &M,
    analytic: &M,
    loss: impl Fn(&M) -> f64,
    eps: f64,
    stride: usize,
) -> Result<f64> {
    if !analytic.is_finite() {
        return Err(Error::NonFinite("analytic gradient"));
    }
    let stride = stride.max(1);
    let mut probe = params.clone();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.clone()).collect();
    let mut worst: f64 = 0.0;
    let mut flat = 0usize;
    for (ti, g) in grads.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            flat += 1;
            if !(flat - 1).is_multiple_of(stride) {
                continue;
            }
            let orig = probe.tensors()[ti].data[j];
            probe.tensors_mut()[ti].data[j] = orig + eps;
            let up = loss(&probe);
            probe.tensors_mut()[ti].data[j] = orig - eps;
            let down = loss(&probe);
            probe.tensors_mut()[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::NonFinite("numerical gradient"));
            }
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
        }
    }
    Ok(worst)
}

/// Checks the per-example cross-entropy gradient of `model` at `(x, y)` with dropout off.
pub fn grad_check<M: Trainable>(model: &M, x: &[f64], y: usize, eps: f64) -> Result<f64> {
    grad_check_strided(model, x, y, eps, 1)
}

pub fn grad_check_strided<M: Trainable>(model: &M, x: &[f64], y: usize, eps: f64, stride: usize) -> Result<f64> {
    if x.len() != model.input_len() {
        return Err(Error::DimensionMismatch {
            expected: model.input_len(),
            got: x.len(),
        });
    }
    let mut analytic = model.zeroed();
    model.loss_grad(x, y, None, &mut analytic);
    check_gradient(model, &analytic, |m| m.loss(x, y), eps, stride)
}
