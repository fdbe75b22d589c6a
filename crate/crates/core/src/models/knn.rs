//! k-nearest-neighbour regression on Euclidean distance.

use super::{ModelError, ModelSpec};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnWeights {
    Uniform,
    /// Inverse distance; an exact match takes the mean of the exact matches.
    Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    pub weights: KnnWeights,
}

impl KnnParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let k = spec.count("k")?;
        if k == 0 {
            return Err(ModelError::BadParam {
                key: "k".into(),
                value: "0".into(),
            });
        }
        let weights = match spec.text("weights")?.as_str() {
            "uniform" => KnnWeights::Uniform,
            "distance" => KnnWeights::Distance,
            other => {
                return Err(ModelError::BadParam {
                    key: "weights".into(),
                    value: other.into(),
                })
            }
        };
        Ok(Self { k, weights })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub k: usize,
    pub weights: KnnWeights,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Knn {
    pub fn fit(p: &KnnParams, x: &Matrix, y: &[f64]) -> Result<Self, ModelError> {
        if x.rows() < p.k {
            return Err(ModelError::TooFewSamples {
                needed: p.k,
                got: x.rows(),
            });
        }
        Ok(Self {
            k: p.k,
            weights: p.weights,
            x: x.clone(),
            y: y.to_vec(),
        })
    }

    /// Neighbours are ordered by distance, then by the stored row's values,
    /// then by label, so the result does not depend on training-row order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut cand: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| {
                let d2: f64 = r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| {
                    let (ra, rb) = (self.x.row(a.1), self.x.row(b.1));
                    ra.iter()
                        .zip(rb)
                        .map(|(p, q)| p.total_cmp(q))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| self.y[a.1].total_cmp(&self.y[b.1]))
        };
        let k = self.k.min(cand.len());
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
            cand.truncate(k);
        }
        cand.sort_by(order);
        match self.weights {
            KnnWeights::Uniform => cand.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64,
            KnnWeights::Distance => {
                let exact: Vec<f64> = cand
                    .iter()
                    .filter(|c| c.0 == 0.0)
                    .map(|&(_, i)| self.y[i])
                    .collect();
                if !exact.is_empty() {
                    return exact.iter().sum::<f64>() / exact.len() as f64;
                }
                let (num, den) = cand.iter().fold((0.0, 0.0), |(n, d), &(d2, i)| {
                    let w = 1.0 / d2.sqrt();
                    (n + w * self.y[i], d + w)
                });
                num / den
            }
        }
    }
}
