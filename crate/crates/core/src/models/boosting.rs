//! Gradient tree boosting with squared loss.

use super::tree::{RegressionTree, TreeConfig};
use super::{ModelError, ModelSpec};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub tree: TreeConfig,
}

impl BoostParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let learning_rate = spec.num("learning_rate")?;
        if learning_rate <= 0.0 {
            return Err(ModelError::BadParam {
                key: "learning_rate".into(),
                value: learning_rate.to_string(),
            });
        }
        let max_depth = spec.count("max_depth")?;
        Ok(Self {
            learning_rate,
            n_estimators: spec.count("n_estimators")?,
            tree: TreeConfig {
                min_samples_split: spec.count("min_samples_split")?.max(2),
                min_samples_leaf: spec.count("min_samples_leaf")?.max(1),
                max_depth: (max_depth > 0).then_some(max_depth),
                max_features: None,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    /// Stagewise fit: start from mean(y), then each tree fits the current
    /// residuals and is added with shrinkage `learning_rate`.
    pub fn fit(p: &BoostParams, x: &Matrix, y: &[f64]) -> Self {
        let n = x.rows();
        let mut sorted = y.to_vec();
        sorted.sort_by(f64::total_cmp);
        let init = sorted.iter().sum::<f64>() / n as f64;
        let mut current = vec![init; n];
        let mut residual = vec![0.0; n];
        let mut trees = Vec::with_capacity(p.n_estimators);
        for _ in 0..p.n_estimators {
            for i in 0..n {
                residual[i] = y[i] - current[i];
            }
            let tree = RegressionTree::fit(x, &residual, (0..n).collect(), &p.tree, None);
            for (i, c) in current.iter_mut().enumerate() {
                *c += p.learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        Self {
            init,
            learning_rate: p.learning_rate,
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut v = self.init;
        for t in &self.trees {
            v += self.learning_rate * t.predict_row(row);
        }
        v
    }
}
