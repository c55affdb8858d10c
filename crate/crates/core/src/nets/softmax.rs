//! Multinomial logistic regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_training_set, dot, softmax_xent, Dropout, ParamSet, Tensor, Trainable, Trained};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegressionParams {
    pub features: usize,
    pub classes: usize,
    /// `[classes, features]`
    pub weight: Tensor,
    /// `[classes]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxTrainConfig {
    /// Penalty `l2/2 · ‖W‖²`; the bias is not penalised.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
}

impl Default for SoftmaxTrainConfig {
    fn default() -> Self {
        SoftmaxTrainConfig {
            l2: 1e-4,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl SoftmaxRegressionParams {
    pub fn zeros(features: usize, classes: usize) -> Self {
        SoftmaxRegressionParams {
            features,
            classes,
            weight: Tensor::zeros(&[classes, features]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(self.weight.row(c), x) + self.bias.data[c])
            .collect()
    }
}

impl ParamSet for SoftmaxRegressionParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Trainable for SoftmaxRegressionParams {
    fn input_len(&self) -> usize {
        self.features
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax_xent(&self.logits(x), None).0
    }

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        softmax_xent(&self.logits(x), Some(y)).1
    }

    fn loss_grad(&self, x: &[f64], y: usize, _dropout: Option<&mut Dropout<'_>>, grad: &mut Self) -> f64 {
        let (mut d, loss) = softmax_xent(&self.logits(x), Some(y));
        d[y] -= 1.0;
        grad.weight.add_outer(&d, x);
        grad.bias.data.iter_mut().zip(&d).for_each(|(g, v)| *g += v);
        loss
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²`, with its gradient.
pub fn softmax_objective<X: AsRef<[f64]>>(
    params: &SoftmaxRegressionParams,
    xs: &[X],
    ys: &[usize],
    l2: f64,
) -> (f64, SoftmaxRegressionParams) {
    let mut grad = params.zeroed();
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        loss += params.loss_grad(x.as_ref(), y, None, &mut grad);
    }
    let n = xs.len() as f64;
    loss /= n;
    grad.scale(1.0 / n);
    let mut penalty = 0.0;
    for (g, w) in grad.weight.data.iter_mut().zip(&params.weight.data) {
        *g += l2 * w;
        penalty += w * w;
    }
    (loss + 0.5 * l2 * penalty, grad)
}

fn sq_norm(p: &SoftmaxRegressionParams) -> f64 {
    p.tensors().iter().flat_map(|t| &t.data).map(|v| v * v).sum()
}

/// Gradient descent from zero with Armijo backtracking; the trace records the
/// objective at the start and after each accepted step.
pub fn softmax_train<X: AsRef<[f64]>>(
    xs: &[X],
    ys: &[usize],
    classes: usize,
    config: &SoftmaxTrainConfig,
) -> Result<Trained<SoftmaxRegressionParams>> {
    if xs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let features = xs[0].as_ref().len();
    check_training_set(xs, ys, features, classes)?;
    if config.l2 < 0.0 || !config.l2.is_finite() {
        return Err(Error::InvalidArgument(format!("l2 = {}", config.l2)));
    }
    let mut params = SoftmaxRegressionParams::zeros(features, classes);
    let (mut loss, mut grad) = softmax_objective(&params, xs, ys, config.l2);
    let mut trace = vec![loss];
    let mut step = 1.0;
    for _ in 0..config.max_iter {
        let gnorm2 = sq_norm(&grad);
        if gnorm2.sqrt() < config.tol {
            break;
        }
        let mut accepted = None;
        while step > 1e-20 {
            let mut cand = params.clone();
            for (c, g) in cand.tensors_mut().into_iter().zip(grad.tensors()) {
                c.data.iter_mut().zip(&g.data).for_each(|(c, g)| *c -= step * g);
            }
            let (cl, cg) = softmax_objective(&cand, xs, ys, config.l2);
            if cl <= loss - 0.5 * step * gnorm2 {
                accepted = Some((cand, cl, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cl, cg)) = accepted else { break };
        params = cand;
        loss = cl;
        grad = cg;
        trace.push(loss);
        step = (step * 2.0).min(1e6);
    }
    Ok(Trained {
        params,
        loss_trace: trace,
    })
}

pub fn softmax_predict(params: &SoftmaxRegressionParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.features {
        return Err(Error::DimensionMismatch {
            expected: params.features,
            got: x.len(),
        });
    }
    Ok(params.probs(x))
}
