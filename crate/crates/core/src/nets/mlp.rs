//! Two-hidden-layer ReLU network over flattened windows.

use serde::{Deserialize, Serialize};

use super::{canonical_sum, check_training_set, dot, fit_adam, init_rng, softmax_xent, Dropout, ParamSet, Tensor, Trainable, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::ingest::N_CLASSES;

pub const MLP_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn new(input_dim: usize) -> Self {
        MlpShape {
            input_dim,
            hidden: MLP_HIDDEN,
            classes: N_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub shape: MlpShape,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        let (p, h, c) = (shape.input_dim, shape.hidden, shape.classes);
        MlpParams {
            shape,
            w1: Tensor::zeros(&[h, p]),
            b1: Tensor::zeros(&[h]),
            w2: Tensor::zeros(&[h, h]),
            b2: Tensor::zeros(&[h]),
            w3: Tensor::zeros(&[c, h]),
            b3: Tensor::zeros(&[c]),
        }
    }

    /// Hidden weights uniform in ±1/√fan-in; biases and the output layer zero.
    pub fn init(shape: MlpShape, rng: &mut impl rand::Rng) -> Self {
        let mut m = MlpParams::zeros(shape);
        m.w1 = Tensor::uniform_fan_in(&[shape.hidden, shape.input_dim], rng);
        m.w2 = Tensor::uniform_fan_in(&[shape.hidden, shape.hidden], rng);
        m
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let a1 = relu_masked(&Self::layer(&self.w1, &self.b1, x), None);
        let a2 = relu_masked(&Self::layer(&self.w2, &self.b2, &a1), None);
        Self::layer(&self.w3, &self.b3, &a2)
    }

    fn layer(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..w.shape[0]).map(|r| dot(w.row(r), x) + b.data[r]).collect()
    }
}

fn relu_masked(z: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => z.iter().zip(m).map(|(z, m)| z.max(0.0) * m).collect(),
        None => z.iter().map(|z| z.max(0.0)).collect(),
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

impl Trainable for MlpParams {
    fn input_len(&self) -> usize {
        self.shape.input_dim
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax_xent(&self.logits(x), None).0
    }

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        softmax_xent(&self.logits(x), Some(y)).1
    }

    fn loss_grad(&self, x: &[f64], y: usize, mut dropout: Option<&mut Dropout<'_>>, grad: &mut Self) -> f64 {
        let h = self.shape.hidden;
        let m1 = dropout.as_mut().map(|d| d.mask(h));
        let m2 = dropout.as_mut().map(|d| d.mask(h));
        let z1 = Self::layer(&self.w1, &self.b1, x);
        let a1 = relu_masked(&z1, m1.as_deref());
        let z2 = Self::layer(&self.w2, &self.b2, &a1);
        let a2 = relu_masked(&z2, m2.as_deref());
        let (p, loss) = softmax_xent(&Self::layer(&self.w3, &self.b3, &a2), Some(y));

        let mut dl = p;
        dl[y] -= 1.0;
        grad.w3.add_outer(&dl, &a2);
        grad.b3.data.iter_mut().zip(&dl).for_each(|(g, d)| *g += d);

        let mut d2: Vec<f64> = (0..h)
            .map(|j| {
                let terms: Vec<f64> = dl.iter().enumerate().map(|(c, d)| self.w3.row(c)[j] * d).collect();
                canonical_sum(&terms)
            })
            .collect();
        for j in 0..h {
            let keep = m2.as_ref().map_or(1.0, |m| m[j]);
            d2[j] *= if z2[j] > 0.0 { keep } else { 0.0 };
        }
        grad.w2.add_outer(&d2, &a1);
        grad.b2.data.iter_mut().zip(&d2).for_each(|(g, d)| *g += d);

        let mut d1 = self.w2.matvec_t(&d2);
        for j in 0..h {
            let keep = m1.as_ref().map_or(1.0, |m| m[j]);
            d1[j] *= if z1[j] > 0.0 { keep } else { 0.0 };
        }
        grad.w1.add_outer(&d1, x);
        grad.b1.data.iter_mut().zip(&d1).for_each(|(g, d)| *g += d);
        loss
    }
}

pub fn mlp_predict(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.shape.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.shape.input_dim,
            got: x.len(),
        });
    }
    Ok(params.probs(x))
}

pub fn mlp_train<X: AsRef<[f64]>>(xs: &[X], ys: &[usize], shape: MlpShape, config: &TrainConfig) -> Result<Trained<MlpParams>> {
    config.validate()?;
    check_training_set(xs, ys, shape.input_dim, shape.classes)?;
    let mut rng = init_rng(config);
    let init = MlpParams::init(shape, &mut rng);
    let trained = fit_adam(init, xs, ys, config, &mut rng);
    if !trained.params.is_finite() {
        return Err(Error::NonFinite("mlp parameters after training"));
    }
    Ok(trained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{argmax, grad_check};
    use crate::seed;
    use rand::Rng;

    fn small(input: usize, hidden: usize) -> MlpShape {
        MlpShape {
            input_dim: input,
            hidden,
            classes: 4,
        }
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut rng = seed::rng(0);
        let m = MlpParams::init(MlpShape::new(18), &mut rng);
        let x: Vec<f64> = (0..18).map(|i| i as f64 * 0.1).collect();
        assert_eq!(mlp_predict(&m, &x).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn predict_sums_to_one() {
        let mut rng = seed::rng(1);
        let mut m = MlpParams::init(small(5, 16), &mut rng);
        m.w3 = Tensor::uniform_fan_in(&[4, 16], &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = mlp_predict(&m, &x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(mlp_predict(&m, &[0.0; 4]).is_err());
    }

    #[test]
    fn learns_xor() {
        let mut rng = seed::rng(2);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            xs.push(vec![a, b]);
            ys.push(usize::from((a > 0.0) != (b > 0.0)));
        }
        let cfg = TrainConfig {
            learning_rate: 0.01,
            dropout: 0.0,
            seed: 3,
            ..Default::default()
        };
        let t = mlp_train(&xs, &ys, small(2, 32), &cfg).unwrap();
        let acc = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| argmax(&t.params.probs(x)) == **y)
            .count() as f64
            / xs.len() as f64;
        assert!(acc >= 0.95, "xor accuracy {acc}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seed::rng(4);
        for _ in 0..3 {
            let mut m = MlpParams::init(small(6, 12), &mut rng);
            m.w3 = Tensor::uniform_fan_in(&[4, 12], &mut rng);
            m.b1 = Tensor::uniform_fan_in(&[12], &mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let err = grad_check(&m, &x, rng.gen_range(0..4), 1e-5).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
