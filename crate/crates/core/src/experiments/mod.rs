//! The three comparative experiments: learning curves, prediction timing and
//! the summary table. All of them share one seeded 80/20 split with the scaler
//! fitted on the training side.

mod comparison;
mod learning_curve;
mod timing;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{kfold_split, train_test_split, EvalError, MetricError, SplitError, SplitPlan};
use crate::features::{extract_features, feature_matrix, fit_scaler, FeatureError, Scaler, VqiConfig};
use crate::matrix::Matrix;
use crate::models::{ModelError, ModelKind, ModelSpec, ParamValue};
use crate::session::{import_subjective_csv, parse_session_log, CsvMapping, ImportError, LabeledSession, ParseError};
use crate::synth::{generate_dataset, trace_library, AbrPolicy, SynthConfig, SynthError};

pub use comparison::{run_comparison, ComparisonTable, ModelOutcome, TABLE_ROWS};
pub use learning_curve::{run_learning_curve, train_fractions, LearningCurve, LearningCurvePoint};
pub use timing::{run_timing_benchmark, TimingCell, TimingReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("session `{0}` has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("train fraction {fraction} of {n} rows leaves fewer than 2 samples")]
    FractionTooSmall { fraction: f64, n: usize },
    #[error("test size {size} is outside 1..={available}")]
    BadTestSize { size: usize, available: usize },
}

/// Where the labeled sessions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// The built-in trace library under the default policies.
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
    },
    /// A JSON-lines session log.
    Log { path: PathBuf },
    /// Per-session aggregate rows with a column mapping file.
    Csv {
        path: PathBuf,
        mapping: PathBuf,
        scale_max: f64,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Synthetic {
            synth: SynthConfig::default(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ExperimentError> {
    std::fs::read(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl DatasetSource {
    pub fn load(&self, seed: u64, vqi: &VqiConfig) -> Result<Vec<LabeledSession>, ExperimentError> {
        Ok(match self {
            Self::Synthetic { synth } => {
                generate_dataset(&trace_library(), &AbrPolicy::default_set(), synth, vqi, seed)?
            }
            Self::Log { path } => parse_session_log(&read(path)?)?,
            Self::Csv {
                path,
                mapping,
                scale_max,
            } => import_subjective_csv(&read(path)?, &CsvMapping::from_json(&read(mapping)?)?, *scale_max)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split_ratio: f64,
    pub cv_folds: usize,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    /// Per-kind overrides of the default hyperparameters, keyed by kind name.
    pub hyperparams: BTreeMap<String, BTreeMap<String, ParamValue>>,
    pub timing_runs: usize,
    pub timing_warmup: usize,
    /// Test sizes for the timing sweep; empty means 10 %, 20 %, ... of the test set.
    pub timing_sizes: Vec<usize>,
    pub vqi: VqiConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            split_ratio: 0.8,
            cv_folds: 5,
            models: ModelKind::ALL.to_vec(),
            seed: 42,
            hyperparams: BTreeMap::new(),
            timing_runs: 100,
            timing_warmup: 3,
            timing_sizes: Vec::new(),
            vqi: VqiConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.models.is_empty() {
            return Err(ExperimentError::Config("no model kinds selected".into()));
        }
        if self.cv_folds < 2 {
            return Err(ExperimentError::Config(format!("cv_folds must be at least 2, got {}", self.cv_folds)));
        }
        if self.timing_runs == 0 {
            return Err(ExperimentError::Config("timing_runs must be positive".into()));
        }
        for key in self.hyperparams.keys() {
            key.parse::<ModelKind>()?;
        }
        Ok(())
    }

    /// Default hyperparameters for `kind`, the configured overrides and the seed.
    pub fn spec_for(&self, kind: ModelKind) -> Result<ModelSpec, ExperimentError> {
        let mut spec = ModelSpec::default_for(kind).with_seed(self.seed);
        for (key, overrides) in &self.hyperparams {
            if key.parse::<ModelKind>()? == kind {
                spec = spec.apply(overrides)?;
            }
        }
        Ok(spec)
    }
}

/// Feature matrix and labels of a labeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn from_sessions(sessions: &[LabeledSession], vqi: &VqiConfig) -> Result<Self, ExperimentError> {
        let mut y = Vec::with_capacity(sessions.len());
        for s in sessions {
            y.push(
                s.mos_normalized
                    .ok_or_else(|| ExperimentError::Unlabeled(s.session.session_id.clone()))?,
            );
        }
        let fv: Vec<_> = sessions.iter().map(|s| extract_features(&s.session, vqi)).collect();
        Ok(Self {
            ids: sessions.iter().map(|s| s.session.session_id.clone()).collect(),
            x: feature_matrix(&fv),
            y,
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        Self::from_sessions(&cfg.dataset.load(cfg.seed, &cfg.vqi)?, &cfg.vqi)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The split, its folds, and the training-side scaler applied to both sides.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plan: SplitPlan,
    pub scaler: Scaler,
    pub x_train: Matrix,
    pub y_train: Vec<f64>,
    pub x_test: Matrix,
    pub y_test: Vec<f64>,
}

pub fn prepare(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let mut plan = train_test_split(ds.len(), cfg.split_ratio, cfg.seed)?;
    plan.folds = kfold_split(&plan.train_indices, cfg.cv_folds, cfg.seed)?;
    let raw_train = ds.x.select_rows(&plan.train_indices);
    let scaler = fit_scaler(&raw_train)?;
    Ok(Prepared {
        x_train: scaler.transform(&raw_train)?,
        y_train: plan.train_indices.iter().map(|&i| ds.y[i]).collect(),
        x_test: scaler.transform(&ds.x.select_rows(&plan.test_indices))?,
        y_test: plan.test_indices.iter().map(|&i| ds.y[i]).collect(),
        scaler,
        plan,
    })
}
