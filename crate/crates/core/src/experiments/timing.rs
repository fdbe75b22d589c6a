use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::{prepare, Dataset, ExperimentConfig, ExperimentError};
use crate::models::{fit_model, ModelKind, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingCell {
    pub model: ModelKind,
    pub test_size: usize,
    pub runs: usize,
    pub mean_s: f64,
    /// Sample standard deviation over the timed runs.
    pub std_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub warmup_runs: usize,
    pub runs: usize,
    pub cells: Vec<TimingCell>,
    /// Per test size, models from slowest to fastest mean.
    pub ordering: Vec<(usize, Vec<ModelKind>)>,
}

impl TimingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,test_size,runs,mean_s,std_s\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", c.model.name(), c.test_size, c.runs, c.mean_s, c.std_s);
        }
        out
    }

    pub fn ordering_lines(&self) -> String {
        let mut out = String::new();
        for (size, models) in &self.ordering {
            let names: Vec<&str> = models.iter().map(|m| m.name()).collect();
            let _ = writeln!(out, "test_size {size}: {}", names.join(" > "));
        }
        out
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Wall time of `predict` per model and test size. Models are fitted on the
/// training split first; each cell runs `timing_warmup` untimed calls, then
/// `timing_runs` timed ones, all on a single worker thread.
pub fn run_timing_benchmark(ds: &Dataset, cfg: &ExperimentConfig) -> Result<TimingReport, ExperimentError> {
    let p = prepare(ds, cfg)?;
    let available = p.plan.test_indices.len();
    let sizes: Vec<usize> = if cfg.timing_sizes.is_empty() {
        let mut v: Vec<usize> = (1..=10).map(|k| k * available / 10).collect();
        v.dedup();
        v
    } else {
        cfg.timing_sizes.clone()
    };
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > available) {
        return Err(ExperimentError::BadTestSize { size: bad, available });
    }
    let models: Vec<TrainedModel> = cfg
        .models
        .iter()
        .map(|&k| Ok(fit_model(&cfg.spec_for(k)?, &p.x_train, &p.y_train)?))
        .collect::<Result<_, ExperimentError>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    let cells = pool.install(|| -> Result<Vec<TimingCell>, ExperimentError> {
        let mut cells = Vec::new();
        for m in &models {
            for &size in &sizes {
                let rows: Vec<usize> = (0..size).collect();
                let x = p.x_test.select_rows(&rows);
                for _ in 0..cfg.timing_warmup {
                    std::hint::black_box(m.predict(&x)?);
                }
                let mut times = Vec::with_capacity(cfg.timing_runs);
                for _ in 0..cfg.timing_runs {
                    let t = Instant::now();
                    std::hint::black_box(m.predict(std::hint::black_box(&x))?);
                    times.push(t.elapsed().as_secs_f64());
                }
                let (mean_s, std_s) = mean_std(&times);
                cells.push(TimingCell {
                    model: m.kind(),
                    test_size: size,
                    runs: times.len(),
                    mean_s,
                    std_s,
                });
            }
        }
        Ok(cells)
    })?;

    let ordering = sizes
        .iter()
        .map(|&s| {
            let mut at: Vec<&TimingCell> = cells.iter().filter(|c| c.test_size == s).collect();
            at.sort_by(|a, b| b.mean_s.total_cmp(&a.mean_s));
            (s, at.iter().map(|c| c.model).collect())
        })
        .collect();
    Ok(TimingReport {
        warmup_runs: cfg.timing_warmup,
        runs: cfg.timing_runs,
        cells,
        ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests::small_config;

    #[test]
    fn every_cell_has_the_requested_runs() {
        let cfg = small_config();
        let ds = Dataset::load(&cfg).unwrap();
        let r = run_timing_benchmark(&ds, &cfg).unwrap();
        // 16 test rows: sizes 1, 3, 4, 6, 8, 9, 11, 12, 14, 16.
        assert_eq!(r.cells.len(), 7 * 10);
        assert!(r.cells.iter().all(|c| c.runs == 5 && c.mean_s >= 0.0 && c.std_s >= 0.0));
        assert_eq!(r.ordering.len(), 10);
        assert!(r.ordering.iter().all(|(_, m)| m.len() == 7));
        assert_eq!(r.to_csv().lines().count(), 71);
        assert_eq!(r.ordering_lines().lines().count(), 10);
    }

    #[test]
    fn empty_test_size_is_rejected_before_timing() {
        let cfg = ExperimentConfig {
            timing_sizes: vec![4, 0],
            ..small_config()
        };
        let ds = Dataset::load(&cfg).unwrap();
        assert!(matches!(
            run_timing_benchmark(&ds, &cfg),
            Err(ExperimentError::BadTestSize { size: 0, .. })
        ));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
