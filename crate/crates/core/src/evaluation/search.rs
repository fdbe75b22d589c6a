use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::metrics::{r2, MetricError};
use crate::features::{fit_scaler, FeatureError, Scaler};
use crate::matrix::Matrix;
use crate::models::{fit_model, predict, ModelError, ModelSpec, ParamValue};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fold {fold}: scaling failed: {source}")]
    Scale { fold: usize, source: FeatureError },
    #[error("fold {fold}: fit failed: {source}")]
    Fit { fold: usize, source: ModelError },
    #[error("fold {fold}: scoring failed: {source}")]
    Metric { fold: usize, source: MetricError },
    #[error("invalid folds: {0}")]
    BadFolds(String),
    #[error("grid is empty or has a key with no values")]
    EmptyGrid,
    #[error("invalid grid candidate: {0}")]
    Spec(ModelError),
    #[error("every grid candidate failed:\n{}", .0.join("\n"))]
    AllCandidatesFailed(Vec<String>),
}

#[derive(Debug)]
pub struct CvResult {
    /// Validation R² per fold (1-based fold numbers in errors).
    pub fold_scores: Vec<Result<f64, EvalError>>,
    /// Mean of the fold scores; `None` when any fold failed.
    pub mean: Option<f64>,
    /// Scaler fitted on each fold's training part.
    pub scalers: Vec<Option<Scaler>>,
}

fn check_folds(n: usize, folds: &[Vec<usize>]) -> Result<(), EvalError> {
    if folds.len() < 2 {
        return Err(EvalError::BadFolds(format!("need at least 2 folds, got {}", folds.len())));
    }
    let mut seen = BTreeSet::new();
    for (f, fold) in folds.iter().enumerate() {
        if fold.is_empty() {
            return Err(EvalError::BadFolds(format!("fold {} is empty", f + 1)));
        }
        for &i in fold {
            if i >= n {
                return Err(EvalError::BadFolds(format!("index {i} out of range for {n} rows")));
            }
            if !seen.insert(i) {
                return Err(EvalError::BadFolds(format!("index {i} appears in two folds")));
            }
        }
    }
    Ok(())
}

fn run_fold(
    spec: &ModelSpec,
    x: &Matrix,
    y: &[f64],
    folds: &[Vec<usize>],
    f: usize,
) -> (Result<f64, EvalError>, Option<Scaler>) {
    let fold = f + 1;
    let train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let val = &folds[f];
    let x_train_raw = x.select_rows(&train);
    let scaler = match fit_scaler(&x_train_raw) {
        Ok(s) => s,
        Err(source) => return (Err(EvalError::Scale { fold, source }), None),
    };
    let scored = (|| {
        let x_train = scaler
            .transform(&x_train_raw)
            .map_err(|source| EvalError::Scale { fold, source })?;
        let x_val = scaler
            .transform(&x.select_rows(val))
            .map_err(|source| EvalError::Scale { fold, source })?;
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let y_val: Vec<f64> = val.iter().map(|&i| y[i]).collect();
        let model = fit_model(spec, &x_train, &y_train).map_err(|source| EvalError::Fit { fold, source })?;
        let pred = predict(&model, &x_val).map_err(|source| EvalError::Fit { fold, source })?;
        r2(&y_val, &pred).map_err(|source| EvalError::Metric { fold, source })
    })();
    (scored, Some(scaler))
}

/// k-fold cross-validated R². Each fold's scaler and model see only the
/// other folds; rows outside every fold are never touched.
pub fn cross_validate(
    spec: &ModelSpec,
    x: &Matrix,
    y: &[f64],
    folds: &[Vec<usize>],
) -> Result<CvResult, EvalError> {
    if x.rows() != y.len() {
        return Err(EvalError::BadFolds(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    check_folds(x.rows(), folds)?;
    let (fold_scores, scalers): (Vec<_>, Vec<_>) = (0..folds.len())
        .into_par_iter()
        .map(|f| run_fold(spec, x, y, folds, f))
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();
    let ok: Vec<f64> = fold_scores.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let mean = (ok.len() == fold_scores.len()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    Ok(CvResult {
        fold_scores,
        mean,
        scalers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub params: BTreeMap<String, ParamValue>,
    pub fold_scores: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: ModelSpec,
    pub best_score: f64,
    pub best_index: usize,
    /// One row per candidate in grid order.
    pub rows: Vec<GridRow>,
}

/// Cartesian product in key order, with the last key varying fastest.
pub fn grid_candidates(
    grid: &BTreeMap<String, Vec<ParamValue>>,
) -> Result<Vec<BTreeMap<String, ParamValue>>, EvalError> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(EvalError::EmptyGrid);
    }
    let keys: Vec<&String> = grid.keys().collect();
    let mut out = vec![BTreeMap::new()];
    for key in keys {
        out = out
            .into_iter()
            .flat_map(|partial| {
                grid[key].iter().map(move |v| {
                    let mut c = partial.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(out)
}

/// Exhaustive search maximizing mean cross-validated R². Ties go to the
/// candidate that comes first in grid order.
pub fn grid_search(
    base: &ModelSpec,
    grid: &BTreeMap<String, Vec<ParamValue>>,
    x: &Matrix,
    y: &[f64],
    folds: &[Vec<usize>],
) -> Result<GridResult, EvalError> {
    let candidates = grid_candidates(grid)?;
    let specs = candidates
        .iter()
        .map(|c| base.clone().apply(c).map_err(EvalError::Spec))
        .collect::<Result<Vec<_>, _>>()?;
    if x.rows() != y.len() {
        return Err(EvalError::BadFolds(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    check_folds(x.rows(), folds)?;

    let results: Vec<CvResult> = specs
        .par_iter()
        .map(|s| cross_validate(s, x, y, folds))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    let mut failures = Vec::new();
    for (i, (params, cv)) in candidates.into_iter().zip(results).enumerate() {
        let error = cv
            .fold_scores
            .iter()
            .find_map(|r| r.as_ref().err())
            .map(ToString::to_string);
        if let Some(e) = &error {
            failures.push(format!("candidate {}: {e}", i + 1));
        }
        if let Some(m) = cv.mean {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        rows.push(GridRow {
            params,
            fold_scores: cv.fold_scores.iter().map(|r| r.as_ref().ok().copied()).collect(),
            mean: cv.mean,
            error,
        });
    }
    let (best_index, best_score) = best.ok_or(EvalError::AllCandidatesFailed(failures))?;
    Ok(GridResult {
        best: specs[best_index].clone(),
        best_score,
        best_index,
        rows,
    })
}

impl GridResult {
    /// Columns: one per hyperparameter, `fold_1..fold_k`, `mean`.
    pub fn to_csv(&self) -> String {
        let keys: Vec<String> = self
            .rows
            .first()
            .map(|r| r.params.keys().cloned().collect())
            .unwrap_or_default();
        let k = self.rows.first().map_or(0, |r| r.fold_scores.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = keys.clone();
        header.extend((1..=k).map(|f| format!("fold_{f}")));
        header.push("mean".into());
        w.write_record(&header).expect("in-memory write");
        let num = |v: Option<f64>| v.map_or_else(String::new, |s| s.to_string());
        for row in &self.rows {
            let mut rec: Vec<String> = keys.iter().map(|k| row.params[k].to_string()).collect();
            rec.extend(row.fold_scores.iter().map(|&s| num(s)));
            rec.push(num(row.mean));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::split::kfold_split;
    use crate::models::tests::toy_data;
    use crate::models::ModelKind;

    fn folds(n: usize, k: usize) -> Vec<Vec<usize>> {
        kfold_split(&(0..n).collect::<Vec<_>>(), k, 7).unwrap()
    }

    #[test]
    fn mean_is_average_of_folds() {
        let (x, y) = toy_data(60, 4, 1);
        let cv = cross_validate(&ModelSpec::default_for(ModelKind::Knn), &x, &y, &folds(60, 5)).unwrap();
        let scores: Vec<f64> = cv.fold_scores.iter().map(|r| *r.as_ref().unwrap()).collect();
        assert_eq!(scores.len(), 5);
        assert_eq!(cv.mean.unwrap(), scores.iter().sum::<f64>() / 5.0);
    }

    #[test]
    fn constant_fold_labels_are_reported_not_fatal() {
        let (x, mut y) = toy_data(20, 3, 2);
        let f = folds(20, 4);
        for &i in &f[2] {
            y[i] = 0.5;
        }
        let spec = ModelSpec::default_for(ModelKind::Gb).with("n_estimators", 0.0);
        let cv = cross_validate(&spec, &x, &y, &f).unwrap();
        assert!(matches!(cv.fold_scores[2], Err(EvalError::Metric { fold: 3, .. })));
        assert!(cv.fold_scores[0].as_ref().unwrap() <= &0.0);
        assert!(cv.mean.is_none());
    }

    #[test]
    fn knn_recalls_duplicates_across_folds() {
        // Every point appears twice, once in each fold.
        let base = toy_data(10, 2, 3);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..2 {
            for i in 0..10 {
                rows.push(base.0.row(i).to_vec());
                y.push(base.1[i]);
            }
        }
        let x = Matrix::from_rows(&rows);
        let f = vec![(0..10).collect(), (10..20).collect()];
        let spec = ModelSpec::default_for(ModelKind::Knn).with("k", 1.0);
        let cv = cross_validate(&spec, &x, &y, &f).unwrap();
        for s in &cv.fold_scores {
            assert_eq!(*s.as_ref().unwrap(), 1.0);
        }
    }

    #[test]
    fn held_out_rows_do_not_reach_scalers() {
        let (mut x, mut y) = toy_data(50, 4, 4);
        let f = folds(40, 5);
        let spec = ModelSpec::default_for(ModelKind::Dt);
        let before = cross_validate(&spec, &x, &y, &f).unwrap();
        for i in 40..50 {
            y[i] = 1e6;
            for j in 0..4 {
                x.set(i, j, -1e6);
            }
        }
        let after = cross_validate(&spec, &x, &y, &f).unwrap();
        assert_eq!(before.scalers, after.scalers);
        assert_eq!(before.mean, after.mean);
    }

    #[test]
    fn validation_fold_does_not_reach_its_scaler() {
        let (mut x, y) = toy_data(30, 3, 5);
        let f = folds(30, 3);
        let spec = ModelSpec::default_for(ModelKind::Dt);
        let before = cross_validate(&spec, &x, &y, &f).unwrap();
        for &i in &f[1] {
            x.set(i, 0, 99.0);
        }
        let after = cross_validate(&spec, &x, &y, &f).unwrap();
        assert_eq!(before.scalers[1], after.scalers[1]);
        assert_ne!(before.scalers[0], after.scalers[0]);
    }

    #[test]
    fn bad_folds_rejected() {
        let (x, y) = toy_data(10, 2, 6);
        let spec = ModelSpec::default_for(ModelKind::Dt);
        assert!(cross_validate(&spec, &x, &y, &[vec![0, 1], vec![1, 2]]).is_err());
        assert!(cross_validate(&spec, &x, &y, &[vec![0, 1, 2]]).is_err());
        assert!(cross_validate(&spec, &x, &y, &[vec![0], vec![10]]).is_err());
    }

    #[test]
    fn candidate_order_has_last_key_fastest() {
        let grid: BTreeMap<String, Vec<ParamValue>> = [
            ("a".to_string(), vec![1.0.into(), 2.0.into()]),
            ("b".to_string(), vec![3.0.into(), 4.0.into()]),
        ]
        .into_iter()
        .collect();
        let c = grid_candidates(&grid).unwrap();
        let pairs: Vec<(String, String)> =
            c.iter().map(|m| (m["a"].to_string(), m["b"].to_string())).collect();
        assert_eq!(
            pairs,
            [("1", "3"), ("1", "4"), ("2", "3"), ("2", "4")]
                .map(|(a, b)| (a.to_string(), b.to_string()))
        );
    }

    #[test]
    fn singleton_grid_returns_its_spec() {
        let (x, y) = toy_data(40, 3, 7);
        let grid = [("C".to_string(), vec![10.0.into()])].into_iter().collect();
        let base = ModelSpec::default_for(ModelKind::Svr);
        let g = grid_search(&base, &grid, &x, &y, &folds(40, 5)).unwrap();
        assert_eq!(g.best, base);
        assert_eq!(g.rows.len(), 1);
    }

    #[test]
    fn two_by_two_grid_table_and_tie_break() {
        let (x, y) = toy_data(40, 3, 8);
        // Repeated `weights` values make candidates 1/2 and 3/4 score identically.
        let grid = [
            ("k".to_string(), vec![3.0.into(), 5.0.into()]),
            ("weights".to_string(), vec!["uniform".into(), "uniform".into()]),
        ]
        .into_iter()
        .collect();
        let g = grid_search(&ModelSpec::default_for(ModelKind::Knn), &grid, &x, &y, &folds(40, 5))
            .unwrap();
        assert_eq!(g.rows.len(), 4);
        assert_eq!(g.rows[0].mean, g.rows[1].mean);
        assert!(g.best_index == 0 || g.best_index == 2);
        let csv = g.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,weights,fold_1,fold_2,fold_3,fold_4,fold_5,mean");
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn all_failing_candidates_error_with_reasons() {
        let (x, y) = toy_data(20, 3, 9);
        // Training parts hold 16 rows, fewer than k.
        let grid = [("k".to_string(), vec![17.0.into(), 18.0.into()])].into_iter().collect();
        let err = grid_search(&ModelSpec::default_for(ModelKind::Knn), &grid, &x, &y, &folds(20, 5))
            .unwrap_err();
        match err {
            EvalError::AllCandidatesFailed(r) => assert_eq!(r.len(), 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_grid_key_rejected() {
        let (x, y) = toy_data(20, 3, 10);
        let grid = [("nope".to_string(), vec![1.0.into()])].into_iter().collect();
        assert!(matches!(
            grid_search(&ModelSpec::default_for(ModelKind::Dt), &grid, &x, &y, &folds(20, 5)),
            Err(EvalError::Spec(_))
        ));
        assert!(matches!(grid_candidates(&BTreeMap::new()), Err(EvalError::EmptyGrid)));
    }
}
