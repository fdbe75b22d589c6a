//! CART regression trees with variance-reduction splits.
//!
//! Used directly as the decision-tree model and as the base learner of the
//! random forest and gradient boosting. Thresholds are midpoints between
//! consecutive distinct sorted values; among equal gains the split with the
//! lowest feature index, then lowest threshold, wins.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_depth: None,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.gain > o.gain
                    || (self.gain == o.gain
                        && (self.feature, self.threshold) < (o.feature, o.threshold))
            }
        }
    }
}

impl RegressionTree {
    /// Grows a tree on the rows listed in `samples` (duplicates allowed, as in a
    /// bootstrap draw). `rng` is only consulted when `cfg.max_features` limits
    /// the features examined per split.
    pub fn fit(
        x: &Matrix,
        y: &[f64],
        samples: Vec<usize>,
        cfg: &TreeConfig,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        assert!(!samples.is_empty(), "tree needs at least one sample");
        let mut nodes = Vec::new();
        // (sample indices, depth, slot in `nodes` to fill)
        let mut stack: Vec<(Vec<usize>, usize, usize)> = Vec::new();
        nodes.push(Node::Leaf { value: 0.0 });
        stack.push((samples, 0, 0));
        let mut features: Vec<usize> = (0..x.cols()).collect();

        while let Some((idx, depth, slot)) = stack.pop() {
            let value = mean_of(y, &idx);
            let depth_ok = cfg.max_depth.is_none_or(|d| depth < d);
            let split = if depth_ok && idx.len() >= cfg.min_samples_split && !is_pure(y, &idx) {
                if cfg.max_features.is_some() {
                    if let Some(r) = rng.as_deref_mut() {
                        features.shuffle(r);
                    }
                }
                best_split(x, y, &idx, &features, cfg)
            } else {
                None
            };

            match split {
                Some(c) => {
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| x.get(i, c.feature) <= c.threshold);
                    let l = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[slot] = Node::Split {
                        feature: c.feature as u32,
                        threshold: c.threshold,
                        left: l as u32,
                        right: (l + 1) as u32,
                    };
                    // Right pushed first so the left subtree is expanded first.
                    stack.push((right, depth + 1, l + 1));
                    stack.push((left, depth + 1, l));
                }
                None => nodes[slot] = Node::Leaf { value },
            }
        }
        Self { nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }
}

/// Sums in sorted order so the result does not depend on row order.
fn mean_of(y: &[f64], idx: &[usize]) -> f64 {
    let mut v: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_pure(y: &[f64], idx: &[usize]) -> bool {
    let first = y[idx[0]];
    idx.iter().all(|&i| y[i] == first)
}

fn best_split(
    x: &Matrix,
    y: &[f64],
    idx: &[usize],
    feature_order: &[usize],
    cfg: &TreeConfig,
) -> Option<Candidate> {
    let n = idx.len();
    let limit = cfg.max_features.unwrap_or(feature_order.len());
    let mut visited = 0usize;
    let mut best: Option<Candidate> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);

    for &f in feature_order {
        if visited >= limit {
            break;
        }
        sorted.clear();
        sorted.extend(idx.iter().map(|&i| (x.get(i, f), y[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if sorted[0].0 == sorted[n - 1].0 {
            // Constant features do not count against the per-split budget.
            continue;
        }
        visited += 1;
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        let parent_score = total * total / n as f64;

        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += sorted[k].1;
            let nl = k + 1;
            let nr = n - nl;
            if sorted[k].0 == sorted[k + 1].0 {
                continue;
            }
            if nl < cfg.min_samples_leaf || nr < cfg.min_samples_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
            let gain = score - parent_score;
            if gain <= 0.0 {
                continue;
            }
            let (a, b) = (sorted[k].0, sorted[k + 1].0);
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            let c = Candidate {
                gain,
                feature: f,
                threshold,
            };
            if c.beats(&best) {
                best = Some(c);
            }
        }
    }
    best
}
