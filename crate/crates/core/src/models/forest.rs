//! Bagged regression trees.

use rand::Rng;
use rayon::prelude::*;

use super::tree::{RegressionTree, TreeConfig};
use super::{stream_rng, ModelError, ModelSpec};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub random_state: u64,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

fn depth_limit(spec: &ModelSpec) -> Result<Option<usize>, ModelError> {
    Ok(match spec.count("max_depth")? {
        0 => None,
        d => Some(d),
    })
}

fn split_limits(spec: &ModelSpec) -> Result<(usize, usize), ModelError> {
    let split = spec.count("min_samples_split")?;
    let leaf = spec.count("min_samples_leaf")?;
    if split < 2 || leaf < 1 {
        return Err(ModelError::BadParam {
            key: "min_samples_split/min_samples_leaf".into(),
            value: format!("{split}/{leaf}"),
        });
    }
    Ok((split, leaf))
}

pub(crate) fn dt_config(spec: &ModelSpec) -> Result<TreeConfig, ModelError> {
    let (min_samples_split, min_samples_leaf) = split_limits(spec)?;
    Ok(TreeConfig {
        min_samples_split,
        min_samples_leaf,
        max_depth: depth_limit(spec)?,
        max_features: None,
    })
}

impl ForestParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let (min_samples_split, min_samples_leaf) = split_limits(spec)?;
        let max_features = spec.count("max_features")?;
        if max_features == 0 {
            return Err(ModelError::BadParam {
                key: "max_features".into(),
                value: "0".into(),
            });
        }
        Ok(Self {
            n_estimators: spec.count("n_estimators")?,
            random_state: spec.count("random_state")? as u64,
            bootstrap: spec.num("bootstrap")? != 0.0,
            tree: TreeConfig {
                min_samples_split,
                min_samples_leaf,
                max_depth: depth_limit(spec)?,
                max_features: Some(max_features),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    /// Tree `t` draws its bootstrap sample and split features from RNG stream
    /// `t` of `random_state`, so the result does not depend on how trees are
    /// scheduled across threads.
    pub fn fit(p: &ForestParams, x: &Matrix, y: &[f64]) -> Self {
        let n = x.rows();
        let mut cfg = p.tree;
        cfg.max_features = cfg.max_features.map(|m| m.min(x.cols()));
        let trees = (0..p.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(p.random_state, t as u64);
                let samples: Vec<usize> = if p.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, samples, &cfg, Some(&mut rng))
            })
            .collect();
        Self { trees }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }
}
