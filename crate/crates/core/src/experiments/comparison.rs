use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{prepare, Dataset, ExperimentConfig, ExperimentError, Prepared};
use crate::evaluation::{compute_metrics, cross_validate, MetricsReport};
use crate::models::{fit_model, ModelKind};

/// Row labels of the summary table, top to bottom.
pub const TABLE_ROWS: [&str; 5] = ["MSE", "MAE", "R2", "PLCC", "SRCC"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub model: ModelKind,
    /// Test-split metrics, absent when fitting or scoring failed.
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub converged: Option<bool>,
    /// Validation R² per fold on the training split.
    pub cv_fold_r2: Vec<Option<f64>>,
    pub cv_mean_r2: Option<f64>,
}

impl ModelOutcome {
    pub fn row_value(&self, row: usize) -> Option<f64> {
        let m = self.metrics?;
        Some([m.mse, m.mae, m.r2, m.plcc, m.srcc][row])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// One entry per configured kind, in configuration order.
    pub outcomes: Vec<ModelOutcome>,
}

fn lower_is_better(row: usize) -> bool {
    row < 2
}

impl ComparisonTable {
    /// Column of the best value in `row`; the first one on ties.
    pub fn best(&self, row: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in self.outcomes.iter().enumerate() {
            let Some(v) = o.row_value(row) else { continue };
            let wins = match best {
                None => true,
                Some((_, b)) if lower_is_better(row) => v < b,
                Some((_, b)) => v > b,
            };
            if wins {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn outcome(&self, kind: ModelKind) -> Option<&ModelOutcome> {
        self.outcomes.iter().find(|o| o.model == kind)
    }

    /// True when some model stopped at an iteration cap.
    pub fn any_unconverged(&self) -> bool {
        self.outcomes.iter().any(|o| o.converged == Some(false))
    }

    /// `metric,<kinds...>,best`; failed cells read `ERR`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for o in &self.outcomes {
            out.push(',');
            out.push_str(o.model.name());
        }
        out.push_str(",best\n");
        for (r, label) in TABLE_ROWS.iter().enumerate() {
            out.push_str(label);
            for o in &self.outcomes {
                let _ = match o.row_value(r) {
                    Some(v) => write!(out, ",{v}"),
                    None => write!(out, ",ERR"),
                };
            }
            let best = self.best(r).map_or("", |i| self.outcomes[i].model.name());
            let _ = writeln!(out, ",{best}");
        }
        out
    }

    /// Metrics as rows, models as columns, best value per row in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Metric |");
        for o in &self.outcomes {
            let _ = write!(out, " {} |", o.model.name());
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.outcomes.len()));
        out.push('\n');
        for (r, label) in TABLE_ROWS.iter().enumerate() {
            let _ = write!(out, "| {label} |");
            let best = self.best(r);
            for (i, o) in self.outcomes.iter().enumerate() {
                let _ = match o.row_value(r) {
                    Some(v) if best == Some(i) => write!(out, " **{v:.3}** |"),
                    Some(v) => write!(out, " {v:.3} |"),
                    None => write!(out, " ERR |"),
                };
            }
            out.push('\n');
        }
        for o in &self.outcomes {
            if let Some(e) = &o.error {
                let _ = writeln!(out, "\nERR {}: {e}", o.model.name());
            }
        }
        out
    }
}

fn evaluate(kind: ModelKind, ds: &Dataset, p: &Prepared, cfg: &ExperimentConfig) -> ModelOutcome {
    let mut outcome = ModelOutcome {
        model: kind,
        metrics: None,
        error: None,
        converged: None,
        cv_fold_r2: Vec::new(),
        cv_mean_r2: None,
    };
    let spec = match cfg.spec_for(kind) {
        Ok(s) => s,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    match cross_validate(&spec, &ds.x, &ds.y, &p.plan.folds) {
        Ok(cv) => {
            outcome.cv_fold_r2 = cv.fold_scores.iter().map(|r| r.as_ref().ok().copied()).collect();
            outcome.cv_mean_r2 = cv.mean;
        }
        Err(e) => outcome.error = Some(format!("cross-validation: {e}")),
    }
    let fitted = fit_model(&spec, &p.x_train, &p.y_train).map_err(|e| e.to_string());
    let scored = fitted.and_then(|m| {
        outcome.converged = Some(m.converged);
        let yhat = m.predict(&p.x_test).map_err(|e| e.to_string())?;
        compute_metrics(&p.y_test, &yhat).map_err(|e| e.to_string())
    });
    match scored {
        Ok(m) => outcome.metrics = Some(m),
        Err(e) => outcome.error = Some(e),
    }
    outcome
}

/// Fits every configured kind on the training split and scores it on the
/// test split, with a 5-fold cross-validated R² on the training side.
pub fn run_comparison(ds: &Dataset, cfg: &ExperimentConfig) -> Result<ComparisonTable, ExperimentError> {
    let p = prepare(ds, cfg)?;
    let outcomes = cfg.models.par_iter().map(|&k| evaluate(k, ds, &p, cfg)).collect();
    Ok(ComparisonTable {
        seed: cfg.seed,
        n_train: p.plan.train_indices.len(),
        n_test: p.plan.test_indices.len(),
        outcomes,
    })
}
