use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::stream_rng;

/// RNG streams, so the split and the folds drawn from one seed stay independent.
const SPLIT_STREAM: u64 = 11;
const FOLD_STREAM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Ascending row indices.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Validation folds over `train_indices`; empty until [`SplitPlan::with_folds`].
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SplitError {
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("ratio {ratio} on {n} samples leaves one side empty")]
    EmptySide { n: usize, ratio: f64 },
    #[error("cannot make {k} folds from {n} samples")]
    TooFewForFolds { n: usize, k: usize },
}

/// Seeded random split; the training side gets `round(ratio * n)` rows.
pub fn train_test_split(n: usize, ratio: f64, seed: u64) -> Result<SplitPlan, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::BadRatio(ratio));
    }
    if n < 2 {
        return Err(SplitError::TooFewSamples(n));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(SplitError::EmptySide { n, ratio });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitPlan {
        train_indices,
        test_indices,
        folds: Vec::new(),
        seed,
    })
}

/// Seeded k-fold partition; the first `len % k` folds hold one extra index.
pub fn kfold_split(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, SplitError> {
    if k == 0 || indices.len() < k {
        return Err(SplitError::TooFewForFolds {
            n: indices.len(),
            k,
        });
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut stream_rng(seed, FOLD_STREAM));
    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = shuffled[at..at + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += size;
    }
    Ok(folds)
}

impl SplitPlan {
    pub fn with_folds(mut self, k: usize) -> Result<Self, SplitError> {
        self.folds = kfold_split(&self.train_indices, k, self.seed)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eighty_twenty_of_450() {
        let p = train_test_split(450, 0.8, 1).unwrap();
        assert_eq!((p.train_indices.len(), p.test_indices.len()), (360, 90));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            train_test_split(10, 0.8, 3).unwrap(),
            train_test_split(10, 0.8, 3).unwrap()
        );
        assert_ne!(
            train_test_split(100, 0.8, 3).unwrap(),
            train_test_split(100, 0.8, 4).unwrap()
        );
    }

    #[test]
    fn half_of_five_rounds_away_from_zero() {
        let p = train_test_split(5, 0.5, 0).unwrap();
        assert_eq!((p.train_indices.len(), p.test_indices.len()), (3, 2));
    }

    #[test]
    fn split_errors() {
        assert_eq!(train_test_split(10, 1.0, 0), Err(SplitError::BadRatio(1.0)));
        assert_eq!(train_test_split(1, 0.5, 0), Err(SplitError::TooFewSamples(1)));
        assert!(matches!(train_test_split(3, 0.1, 0), Err(SplitError::EmptySide { .. })));
        assert!(matches!(kfold_split(&[1, 2, 3], 5, 0), Err(SplitError::TooFewForFolds { .. })));
    }

    #[test]
    fn fold_sizes() {
        let ten: Vec<usize> = (0..10).collect();
        let sizes: Vec<usize> = kfold_split(&ten, 5, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2; 5]);
        let eleven: Vec<usize> = (0..11).collect();
        let sizes: Vec<usize> = kfold_split(&eleven, 5, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    }

    proptest! {
        #[test]
        fn split_partitions_all_indices(n in 2usize..300, ratio in 0.05f64..0.95, seed: u64) {
            if let Ok(p) = train_test_split(n, ratio, seed) {
                let mut all = p.train_indices.clone();
                all.extend(&p.test_indices);
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(p.train_indices.len(), (ratio * n as f64).round() as usize);
            }
        }

        #[test]
        fn folds_partition_input(
            set in prop::collection::btree_set(0usize..10_000, 5..200),
            k in 2usize..6,
            seed: u64,
        ) {
            let input: Vec<usize> = set.into_iter().collect();
            let folds = kfold_split(&input, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut union: Vec<usize> = folds.concat();
            union.sort_unstable();
            prop_assert_eq!(union, input);
        }
    }
}
