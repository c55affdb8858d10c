//! Many-to-one LSTM: the final hidden state feeds a softmax head.
//!
//! Gate rows are stacked as input, forget, output, candidate. Sigmoid gates,
//! tanh candidate and cell nonlinearity.

use serde::{Deserialize, Serialize};

use super::{canonical_sum, check_training_set, dot, fit_adam, init_rng, softmax_xent, Dropout, ParamSet, Tensor, Trainable, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::ingest::{N_CLASSES, WINDOW_STEPS};

pub const LSTM_HIDDEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl LstmShape {
    pub fn new(input_dim: usize) -> Self {
        LstmShape {
            input_dim,
            hidden_dim: LSTM_HIDDEN,
            classes: N_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub shape: LstmShape,
    /// `[4h, d]`
    pub w_input: Tensor,
    /// `[4h, h]`
    pub w_recurrent: Tensor,
    /// `[4h]`
    pub bias: Tensor,
    /// `[classes, h]`
    pub w_out: Tensor,
    /// `[classes]`
    pub b_out: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Step {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        let (d, h, c) = (shape.input_dim, shape.hidden_dim, shape.classes);
        LstmParams {
            shape,
            w_input: Tensor::zeros(&[4 * h, d]),
            w_recurrent: Tensor::zeros(&[4 * h, h]),
            bias: Tensor::zeros(&[4 * h]),
            w_out: Tensor::zeros(&[c, h]),
            b_out: Tensor::zeros(&[c]),
        }
    }

    /// Recurrent and input weights uniform in ±1/√fan-in; biases and the
    /// output head start at zero.
    pub fn init(shape: LstmShape, rng: &mut impl rand::Rng) -> Self {
        let (d, h) = (shape.input_dim, shape.hidden_dim);
        let mut p = LstmParams::zeros(shape);
        p.w_input = Tensor::uniform_fan_in(&[4 * h, d], rng);
        p.w_recurrent = Tensor::uniform_fan_in(&[4 * h, h], rng);
        p
    }

    fn run(&self, seq: &[f64]) -> (Vec<Step>, Vec<f64>) {
        let (d, h) = (self.shape.input_dim, self.shape.hidden_dim);
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        let mut steps = Vec::with_capacity(seq.len() / d);
        for x in seq.chunks(d) {
            let mut z = self.w_input.matvec(x);
            for ((zi, r), b) in z.iter_mut().zip(self.w_recurrent.matvec(&h_t)).zip(&self.bias.data) {
                *zi += r + b;
            }
            let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let o: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[3 * h..].iter().map(|v| v.tanh()).collect();
            let c_new: Vec<f64> = (0..h).map(|j| f[j] * c_t[j] + i[j] * g[j]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|j| o[j] * tanh_c[j]).collect();
            steps.push(Step {
                h_prev: std::mem::replace(&mut h_t, h_new),
                c_prev: std::mem::replace(&mut c_t, c_new),
                gates: [i, f, o, g],
                tanh_c,
            });
        }
        (steps, h_t)
    }

    /// Hidden state after every timestep.
    pub fn hidden_states(&self, seq: &[f64]) -> Vec<Vec<f64>> {
        let (steps, last) = self.run(seq);
        let mut out: Vec<Vec<f64>> = steps.into_iter().skip(1).map(|s| s.h_prev).collect();
        out.push(last);
        out
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.shape.classes)
            .map(|c| dot(self.w_out.row(c), h) + self.b_out.data[c])
            .collect()
    }

    fn masked_forward(&self, seq: &[f64], mask: Option<&[f64]>, y: Option<usize>) -> (Vec<Step>, Vec<f64>, Vec<f64>, f64) {
        let (steps, h_last) = self.run(seq);
        let h_head: Vec<f64> = match mask {
            Some(m) => h_last.iter().zip(m).map(|(h, m)| h * m).collect(),
            None => h_last,
        };
        let (p, loss) = softmax_xent(&self.logits(&h_head), y);
        (steps, h_head, p, loss)
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_recurrent, &self.bias, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_input,
            &mut self.w_recurrent,
            &mut self.bias,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

impl Trainable for LstmParams {
    fn input_len(&self) -> usize {
        WINDOW_STEPS * self.shape.input_dim
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.masked_forward(x, None, None).2
    }

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        self.masked_forward(x, None, Some(y)).3
    }

    fn loss_grad(&self, x: &[f64], y: usize, dropout: Option<&mut Dropout<'_>>, grad: &mut Self) -> f64 {
        let (d, h) = (self.shape.input_dim, self.shape.hidden_dim);
        let mask = dropout.map(|dr| dr.mask(h));
        let (steps, h_head, p, loss) = self.masked_forward(x, mask.as_deref(), Some(y));

        let mut dlogits = p;
        dlogits[y] -= 1.0;
        grad.w_out.add_outer(&dlogits, &h_head);
        for (b, dl) in grad.b_out.data.iter_mut().zip(&dlogits) {
            *b += dl;
        }
        let mut dh: Vec<f64> = (0..h)
            .map(|j| {
                let terms: Vec<f64> = dlogits
                    .iter()
                    .enumerate()
                    .map(|(c, dl)| self.w_out.row(c)[j] * dl)
                    .collect();
                canonical_sum(&terms)
            })
            .collect();
        if let Some(m) = &mask {
            dh.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
        }

        let mut dc = vec![0.0; h];
        for (t, step) in steps.iter().enumerate().rev() {
            let [i, f, o, g] = &step.gates;
            let x_t = &x[t * d..(t + 1) * d];
            let mut dz = vec![0.0; 4 * h];
            for j in 0..h {
                let dcj = dc[j] + dh[j] * o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
                dz[j] = dcj * g[j] * i[j] * (1.0 - i[j]);
                dz[h + j] = dcj * step.c_prev[j] * f[j] * (1.0 - f[j]);
                dz[2 * h + j] = dh[j] * step.tanh_c[j] * o[j] * (1.0 - o[j]);
                dz[3 * h + j] = dcj * i[j] * (1.0 - g[j] * g[j]);
                dc[j] = dcj * f[j];
            }
            grad.w_input.add_outer(&dz, x_t);
            grad.w_recurrent.add_outer(&dz, &step.h_prev);
            for (b, v) in grad.bias.data.iter_mut().zip(&dz) {
                *b += v;
            }
            dh = self.w_recurrent.matvec_t(&dz);
        }
        loss
    }
}

/// Class probabilities for one two-step window; `dropout_mask` multiplies the
/// final hidden state.
pub fn lstm_forward(params: &LstmParams, window: &[f64], dropout_mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let expected = WINDOW_STEPS * params.shape.input_dim;
    if window.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: window.len(),
        });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm input"));
    }
    if let Some(m) = dropout_mask {
        if m.len() != params.shape.hidden_dim {
            return Err(Error::DimensionMismatch {
                expected: params.shape.hidden_dim,
                got: m.len(),
            });
        }
    }
    Ok(params.masked_forward(window, dropout_mask, None).2)
}

/// Trains a fresh network on windows `xs` with class indices `ys`.
pub fn lstm_train<X: AsRef<[f64]>>(xs: &[X], ys: &[usize], shape: LstmShape, config: &TrainConfig) -> Result<Trained<LstmParams>> {
    config.validate()?;
    check_training_set(xs, ys, WINDOW_STEPS * shape.input_dim, shape.classes)?;
    let mut rng = init_rng(config);
    let init = LstmParams::init(shape, &mut rng);
    let trained = fit_adam(init, xs, ys, config, &mut rng);
    if !trained.params.is_finite() {
        return Err(Error::NonFinite("lstm parameters after training"));
    }
    Ok(trained)
}
