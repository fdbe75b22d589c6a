//! Linear regression trained by stochastic gradient descent.
//!
//! Squared loss with a small L2 penalty, inverse-scaling step size
//! `eta0 / t^power_t` where `t` counts single-sample updates, and a seeded
//! reshuffle of the rows every epoch. Training stops once the epoch loss has
//! failed to improve on the best loss by `tol` for `n_iter_no_change`
//! consecutive epochs, or after `max_epochs`.

use rand::seq::SliceRandom;

use super::{stream_rng, ModelError, ModelSpec};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdParams {
    pub max_epochs: usize,
    pub tol: f64,
    pub eta0: f64,
    pub power_t: f64,
    pub alpha: f64,
    pub n_iter_no_change: usize,
}

impl SgdParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let p = Self {
            max_epochs: spec.count("max_epochs")?.max(1),
            tol: spec.num("tol")?,
            eta0: spec.num("eta0")?,
            power_t: spec.num("power_t")?,
            alpha: spec.num("alpha")?,
            n_iter_no_change: spec.count("n_iter_no_change")?.max(1),
        };
        if p.eta0 <= 0.0 || p.alpha < 0.0 {
            return Err(ModelError::BadParam {
                key: "eta0/alpha".into(),
                value: format!("{}/{}", p.eta0, p.alpha),
            });
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Epochs actually run.
    pub epochs: usize,
}

impl LinearModel {
    pub fn fit_sgd(p: &SgdParams, x: &Matrix, y: &[f64], seed: u64) -> (Self, bool) {
        let n = x.rows();
        let d = x.cols();
        let mut rng = stream_rng(seed, 0);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 1.0f64;
        let mut best_loss = f64::INFINITY;
        let mut stale = 0usize;
        let mut converged = false;
        let mut epochs = 0;

        for _ in 0..p.max_epochs {
            epochs += 1;
            order.shuffle(&mut rng);
            let mut sum_loss = 0.0;
            for &i in &order {
                let row = x.row(i);
                let pred = dot(&w, row) + b;
                let err = pred - y[i];
                sum_loss += 0.5 * err * err;
                let eta = p.eta0 / t.powf(p.power_t);
                let shrink = 1.0 - eta * p.alpha;
                for (wj, xj) in w.iter_mut().zip(row) {
                    *wj = *wj * shrink - eta * err * xj;
                }
                b -= eta * err;
                t += 1.0;
            }
            let loss = sum_loss / n as f64;
            if loss > best_loss - p.tol {
                stale += 1;
            } else {
                stale = 0;
            }
            best_loss = best_loss.min(loss);
            if stale >= p.n_iter_no_change {
                converged = true;
                break;
            }
        }
        (
            Self {
                coef: w,
                intercept: b,
                epochs,
            },
            converged,
        )
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        dot(&self.coef, row) + self.intercept
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
