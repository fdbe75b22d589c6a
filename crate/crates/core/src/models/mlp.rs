//! Single-hidden-layer perceptron regressor.
//!
//! One hidden layer of `hidden_units` units, identity output, squared loss
//! with L2 penalty `alpha` on the weights. Trained with mini-batch Adam at a
//! constant learning rate; rows are reshuffled from the seeded RNG every epoch.
//! Weights and biases start uniform in `±sqrt(6 / (fan_in + fan_out))`.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, ModelError, ModelSpec};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub learning_rate: f64,
    pub activation: Activation,
    pub hidden_units: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub tol: f64,
    pub n_iter_no_change: usize,
}

impl MlpParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let activation = match spec.text("activation")?.as_str() {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => {
                return Err(ModelError::BadParam {
                    key: "activation".into(),
                    value: other.into(),
                })
            }
        };
        let p = Self {
            learning_rate: spec.num("learning_rate")?,
            activation,
            hidden_units: spec.count("hidden_units")?,
            max_epochs: spec.count("max_epochs")?.max(1),
            batch_size: spec.count("batch_size")?.max(1),
            alpha: spec.num("alpha")?,
            tol: spec.num("tol")?,
            n_iter_no_change: spec.count("n_iter_no_change")?.max(1),
        };
        if p.hidden_units == 0 || p.learning_rate <= 0.0 || p.alpha < 0.0 {
            return Err(ModelError::BadParam {
                key: "hidden_units/learning_rate/alpha".into(),
                value: format!("{}/{}/{}", p.hidden_units, p.learning_rate, p.alpha),
            });
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Hidden weights, `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub epochs: usize,
}

impl Mlp {
    pub fn init(inputs: usize, hidden: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let b_in = (6.0 / (inputs + hidden) as f64).sqrt();
        let b_out = (6.0 / (hidden + 1) as f64).sqrt();
        let mut draw = |bound: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w1 = draw(b_in, hidden * inputs);
        let b1 = draw(b_in, hidden);
        let w2 = draw(b_out, hidden);
        let b2 = draw(b_out, 1)[0];
        Self {
            inputs,
            hidden,
            activation,
            w1,
            b1,
            w2,
            b2,
            epochs: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters flattened as `[w1, b1, w2, b2]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let (a, rest) = v.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = rest[0];
    }

    fn hidden_pre(&self, row: &[f64], z: &mut [f64]) {
        for (h, zh) in z.iter_mut().enumerate() {
            let w = &self.w1[h * self.inputs..(h + 1) * self.inputs];
            *zh = self.b1[h] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(row, &mut z);
        self.b2
            + z.iter()
                .zip(&self.w2)
                .map(|(&zh, w)| w * self.activation.apply(zh))
                .sum::<f64>()
    }

    /// Penalized batch loss and its gradient (flattened like [`Mlp::flat`]) over `rows`.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64], rows: &[usize], alpha: f64) -> (f64, Vec<f64>) {
        let m = rows.len() as f64;
        let (d, h) = (self.inputs, self.hidden);
        let mut g_w1 = vec![0.0; h * d];
        let mut g_b1 = vec![0.0; h];
        let mut g_w2 = vec![0.0; h];
        let mut g_b2 = 0.0;
        let mut z = vec![0.0; h];
        let mut loss = 0.0;
        for &i in rows {
            let row = x.row(i);
            self.hidden_pre(row, &mut z);
            let out = self.b2
                + z.iter()
                    .zip(&self.w2)
                    .map(|(&zh, w)| w * self.activation.apply(zh))
                    .sum::<f64>();
            let err = out - y[i];
            loss += err * err;
            let delta = err / m;
            g_b2 += delta;
            for k in 0..h {
                g_w2[k] += delta * self.activation.apply(z[k]);
                let dh = delta * self.w2[k] * self.activation.derivative(z[k]);
                g_b1[k] += dh;
                let gw = &mut g_w1[k * d..(k + 1) * d];
                for (g, xv) in gw.iter_mut().zip(row) {
                    *g += dh * xv;
                }
            }
        }
        let sq_w: f64 = self.w1.iter().chain(&self.w2).map(|w| w * w).sum();
        loss = loss / (2.0 * m) + alpha * 0.5 * sq_w / m;
        for (g, w) in g_w1.iter_mut().zip(&self.w1) {
            *g += alpha * w / m;
        }
        for (g, w) in g_w2.iter_mut().zip(&self.w2) {
            *g += alpha * w / m;
        }
        let mut grad = g_w1;
        grad.extend(g_b1);
        grad.extend(g_w2);
        grad.push(g_b2);
        (loss, grad)
    }

    pub fn fit(p: &MlpParams, x: &Matrix, y: &[f64], seed: u64) -> (Self, bool) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;

        let n = x.rows();
        let mut net = Self::init(x.cols(), p.hidden_units, p.activation, seed);
        let mut shuffle_rng = stream_rng(seed, 1);
        let count = net.param_count();
        let mut params = net.flat();
        let mut m1 = vec![0.0; count];
        let mut m2 = vec![0.0; count];
        let mut step = 0i32;
        let batch = p.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stale = 0usize;
        let mut converged = false;

        for _ in 0..p.max_epochs {
            net.epochs += 1;
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                net.set_flat(&params);
                let (loss, grad) = net.loss_and_gradient(x, y, chunk, p.alpha);
                epoch_loss += loss * chunk.len() as f64;
                step += 1;
                let lr_t = p.learning_rate * (1.0 - BETA2.powi(step)).sqrt()
                    / (1.0 - BETA1.powi(step));
                for k in 0..count {
                    m1[k] = BETA1 * m1[k] + (1.0 - BETA1) * grad[k];
                    m2[k] = BETA2 * m2[k] + (1.0 - BETA2) * grad[k] * grad[k];
                    params[k] -= lr_t * m1[k] / (m2[k].sqrt() + EPS);
                }
            }
            let loss = epoch_loss / n as f64;
            if loss > best - p.tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best = best.min(loss);
            if stale > p.n_iter_no_change {
                converged = true;
                break;
            }
        }
        net.set_flat(&params);
        (net, converged)
    }
}
