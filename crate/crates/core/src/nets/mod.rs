//! Small classifiers with hand-derived gradients.
//!
//! Every model keeps its parameters as named [`Tensor`]s so that one Adam
//! implementation, one training loop, and one finite-difference checker serve
//! the LSTM, the MLP and softmax regression alike. Class reductions inside the
//! softmax are summed in sorted order, which makes training exactly
//! equivariant to relabelling the classes.

mod adam;
mod gradcheck;
mod lstm;
mod mlp;
mod softmax;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use adam::AdamState;
pub use gradcheck::{check_gradient, grad_check, grad_check_strided};
pub use lstm::{lstm_forward, lstm_train, LstmParams, LstmShape, LSTM_HIDDEN};
pub use mlp::{mlp_predict, mlp_train, MlpParams, MlpShape, MLP_HIDDEN};
pub use softmax::{softmax_objective, softmax_predict, softmax_train, SoftmaxRegressionParams, SoftmaxTrainConfig};

/// A dense row-major array tagged with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Uniform in `(-1/√fan_in, 1/√fan_in)`, `fan_in` being the last dimension.
    pub fn uniform_fan_in(shape: &[usize], rng: &mut impl Rng) -> Self {
        let fan_in = *shape.last().unwrap_or(&1);
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor {
            shape: shape.to_vec(),
            data: (0..shape.iter().product()).map(|_| rng.gen_range(-s..s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    /// `W x` for a 2-D tensor.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.shape[0]).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Wᵀ v` for a 2-D tensor.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.shape[1]];
        for (r, &vr) in v.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        out
    }

    /// `W += a bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (w, bc) in self.row_mut(r).iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A model whose parameters are a fixed list of tensors.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Inverted dropout applied during training only.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    /// Per-unit multipliers: 0 with probability `rate`, `1/(1-rate)` otherwise.
    pub fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

/// A classifier trained by minimising cross-entropy one example at a time.
pub trait Trainable: ParamSet {
    fn input_len(&self) -> usize;

    /// Class probabilities (dropout off).
    fn probs(&self, x: &[f64]) -> Vec<f64>;

    /// Cross-entropy of `(x, y)`; adds its gradient into `grad`.
    fn loss_grad(&self, x: &[f64], y: usize, dropout: Option<&mut Dropout<'_>>, grad: &mut Self) -> f64;

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        let mut scratch = self.zeroed();
        self.loss_grad(x, y, None, &mut scratch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<M> {
    pub params: M,
    /// Mean training loss per epoch (per accepted step for full-batch solvers).
    pub loss_trace: Vec<f64>,
}

/// Probabilities and cross-entropy from raw logits.
///
/// The normaliser is summed in sorted order so the result does not depend on
/// the order of the classes.
pub(crate) fn softmax_xent(logits: &[f64], y: Option<usize>) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s = canonical_sum(&e);
    let loss = y.map_or(0.0, |y| s.ln() - (logits[y] - m));
    (e.iter().map(|v| v / s).collect(), loss)
}

pub(crate) fn canonical_sum(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_training_set<X: AsRef<[f64]>>(xs: &[X], ys: &[usize], input_len: usize, classes: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    for x in xs {
        let x = x.as_ref();
        if x.len() != input_len {
            return Err(Error::DimensionMismatch {
                expected: input_len,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training input"));
        }
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label index {bad} >= {classes} classes")));
    }
    Ok(())
}

/// Shuffled mini-batch Adam on mean cross-entropy. `rng` has already been used
/// for initialisation; it continues to drive shuffling and dropout.
pub(crate) fn fit_adam<M: Trainable, X: AsRef<[f64]>>(
    mut model: M,
    xs: &[X],
    ys: &[usize],
    config: &TrainConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Trained<M> {
    let n = xs.len();
    let mut adam = AdamState::new(&model, config);
    let mut grad = model.zeroed();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                total += if config.dropout > 0.0 {
                    let mut d = Dropout {
                        rate: config.dropout,
                        rng: &mut *rng,
                    };
                    model.loss_grad(xs[i].as_ref(), ys[i], Some(&mut d), &mut grad)
                } else {
                    model.loss_grad(xs[i].as_ref(), ys[i], None, &mut grad)
                };
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.step(&mut model, &grad);
        }
        trace.push(total / n as f64);
    }
    Trained {
        params: model,
        loss_trace: trace,
    }
}

pub(crate) fn init_rng(config: &TrainConfig) -> rand_chacha::ChaCha8Rng {
    seed::rng(config.seed)
}

/// Writes `epoch,loss` rows.
pub fn write_loss_trace_csv(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_order_free() {
        let logits = [0.3, -1.2, 2.5, 0.31];
        let perm = [2, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
        let (p, l) = softmax_xent(&logits, Some(3));
        let (q, k) = softmax_xent(&permuted, Some(2));
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(p[i].to_bits(), q[j].to_bits());
        }
        assert_eq!(l.to_bits(), k.to_bits());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_trace_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_loss_trace_csv(&p, &[1.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,loss\n1,1.5\n2,0.25\n");
    }
}
