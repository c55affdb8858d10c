use serde::{Deserialize, Serialize};

use super::{ParamSet, TrainConfig};

/// Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<M: ParamSet>(model: &M, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn step<M: ParamSet>(&mut self, model: &mut M, grad: &M) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Tensor;

    #[derive(Clone)]
    struct Scalar(Tensor);

    impl ParamSet for Scalar {
        fn tensors(&self) -> Vec<&Tensor> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = Scalar(Tensor::filled(&[2], 1.0));
        let mut g = Scalar(Tensor::zeros(&[2]));
        g.0.data = vec![3.0, -0.5];
        let mut adam = AdamState::new(&p, &cfg);
        adam.step(&mut p, &g);
        // bias-corrected m̂/√v̂ = sign(g) on the first step
        assert!((p.0.data[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p.0.data[1] - (1.0 + 1e-3)).abs() < 1e-10);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimises_quadratic() {
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut p = Scalar(Tensor::filled(&[1], 4.0));
        let mut adam = AdamState::new(&p, &cfg);
        for _ in 0..2000 {
            let g = Scalar(Tensor::filled(&[1], 2.0 * (p.0.data[0] - 1.0)));
            adam.step(&mut p, &g);
        }
        assert!((p.0.data[0] - 1.0).abs() < 1e-2);
    }
}
