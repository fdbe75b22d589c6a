use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{prepare, Dataset, ExperimentConfig, ExperimentError};
use crate::evaluation::mse;
use crate::features::fit_scaler;
use crate::models::{fit_model, stream_rng, ModelKind};

const ORDER_STREAM: u64 = 13;

/// 0.1, 0.2, ..., 1.0.
pub fn train_fractions() -> [f64; 10] {
    std::array::from_fn(|k| (k + 1) as f64 / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurvePoint {
    pub model: ModelKind,
    pub train_fraction: f64,
    pub train_size: usize,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub seed: u64,
    pub n_test: usize,
    /// Ordered by model, then fraction.
    pub points: Vec<LearningCurvePoint>,
}

impl LearningCurve {
    pub fn point(&self, model: ModelKind, fraction: f64) -> Option<&LearningCurvePoint> {
        self.points
            .iter()
            .find(|p| p.model == model && p.train_fraction == fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,train_fraction,train_size,mse,error\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.model.name(),
                p.train_fraction,
                p.train_size,
                p.mse.map(|v| v.to_string()).unwrap_or_default(),
                p.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }

    /// Whitespace-separated columns (fraction, then one MSE column per model)
    /// for plotting tools; failed points read `nan`.
    pub fn to_plot_data(&self) -> String {
        let mut models: Vec<ModelKind> = Vec::new();
        for p in &self.points {
            if !models.contains(&p.model) {
                models.push(p.model);
            }
        }
        let mut out = String::from("# train_fraction");
        for m in &models {
            let _ = write!(out, " {}", m.name());
        }
        out.push('\n');
        for f in train_fractions() {
            let _ = write!(out, "{f}");
            for &m in &models {
                let v = self.point(m, f).and_then(|p| p.mse).unwrap_or(f64::NAN);
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Test MSE of each kind trained on nested prefixes of one seeded shuffle of
/// the training split. Each prefix is fitted in ascending row order with its
/// own scaler, so the 1.0 point is exactly the comparison-table fit.
pub fn run_learning_curve(ds: &Dataset, cfg: &ExperimentConfig) -> Result<LearningCurve, ExperimentError> {
    let p = prepare(ds, cfg)?;
    let n = p.plan.train_indices.len();
    let sizes: Vec<usize> = (1..=10).map(|k| k * n / 10).collect();
    if sizes[0] < 2 {
        return Err(ExperimentError::FractionTooSmall { fraction: 0.1, n });
    }
    let mut order = p.plan.train_indices.clone();
    order.shuffle(&mut stream_rng(cfg.seed, ORDER_STREAM));
    let raw_test = ds.x.select_rows(&p.plan.test_indices);

    let jobs: Vec<(ModelKind, usize)> = cfg
        .models
        .iter()
        .flat_map(|&m| (0..10).map(move |k| (m, k)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(model, k)| {
            let size = sizes[k];
            let mut rows = order[..size].to_vec();
            rows.sort_unstable();
            let y: Vec<f64> = rows.iter().map(|&i| ds.y[i]).collect();
            let score = || -> Result<f64, ExperimentError> {
                let raw = ds.x.select_rows(&rows);
                let scaler = fit_scaler(&raw)?;
                let m = fit_model(&cfg.spec_for(model)?, &scaler.transform(&raw)?, &y)?;
                let yhat = m.predict(&scaler.transform(&raw_test)?)?;
                Ok(mse(&p.y_test, &yhat)?)
            };
            let (mse, error) = match score() {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            LearningCurvePoint {
                model,
                train_fraction: train_fractions()[k],
                train_size: size,
                mse,
                error,
            }
        })
        .collect();
    Ok(LearningCurve {
        seed: cfg.seed,
        n_test: p.plan.test_indices.len(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests::small_config;
    use crate::experiments::{run_comparison, DatasetSource};
    use crate::synth::SynthConfig;

    #[test]
    fn ten_fractions_exactly() {
        let f = train_fractions();
        assert_eq!(f.len(), 10);
        assert_eq!(f[0], 0.1);
        assert_eq!(f[9], 1.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn seventy_points_and_full_fraction_matches_comparison() {
        let cfg = small_config();
        let ds = Dataset::load(&cfg).unwrap();
        let lc = run_learning_curve(&ds, &cfg).unwrap();
        assert_eq!(lc.points.len(), 70);
        assert_eq!(lc.to_csv().lines().count(), 71);
        assert_eq!(lc.to_plot_data().lines().count(), 11);
        let table = run_comparison(&ds, &cfg).unwrap();
        for o in &table.outcomes {
            let full = lc.point(o.model, 1.0).unwrap();
            assert_eq!(full.train_size, table.n_train);
            assert_eq!(full.mse, o.metrics.map(|m| m.mse), "{}", o.model);
        }
        assert_eq!(lc, run_learning_curve(&ds, &cfg).unwrap());
    }

    #[test]
    fn prefixes_are_nested() {
        let cfg = small_config();
        let ds = Dataset::load(&cfg).unwrap();
        let lc = run_learning_curve(&ds, &cfg).unwrap();
        let sizes: Vec<usize> = lc.points[..10].iter().map(|p| p.train_size).collect();
        assert_eq!(sizes, vec![6, 12, 18, 24, 31, 37, 43, 49, 55, 62]);
    }

    #[test]
    fn tiny_training_sets_are_rejected() {
        let cfg = ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                synth: SynthConfig {
                    per_cell: 1,
                    ..Default::default()
                },
            },
            ..small_config()
        };
        let mut ds = Dataset::load(&cfg).unwrap();
        let keep: Vec<usize> = (0..20).collect();
        ds.x = ds.x.select_rows(&keep);
        ds.y.truncate(20);
        ds.ids.truncate(20);
        assert!(matches!(
            run_learning_curve(&ds, &cfg),
            Err(ExperimentError::FractionTooSmall { .. })
        ));
    }
}
