//! The seven regressors behind one fit/predict contract.
//!
//! Every model is fitted on standardized features and labels in [0, 1].
//! Hyperparameters travel as a string-keyed map so grid search can override
//! any of them; [`ModelSpec::default_for`] fills in the tuned defaults.

mod boosting;
mod forest;
pub mod format;
mod knn;
pub mod linear;
pub mod mlp;
pub mod svr;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use boosting::{BoostParams, BoostedTrees};
pub use forest::{Forest, ForestParams};
pub use format::{load_model, save_model, FormatError};
pub use knn::{Knn, KnnParams, KnnWeights};
pub use linear::{LinearModel, SgdParams};
pub use mlp::{Mlp, MlpParams};
pub use svr::{Svr, SvrParams};
pub use tree::RegressionTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "GB")]
    Gb,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "SGD")]
    Sgd,
}

impl ModelKind {
    /// Column order of the comparison table.
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Svr,
        ModelKind::Rf,
        ModelKind::Dt,
        ModelKind::Gb,
        ModelKind::Knn,
        ModelKind::Mlp,
        ModelKind::Sgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Svr => "SVR",
            ModelKind::Rf => "RF",
            ModelKind::Dt => "DT",
            ModelKind::Gb => "GB",
            ModelKind::Knn => "KNN",
            ModelKind::Mlp => "MLP",
            ModelKind::Sgd => "SGD",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelKind::Svr => 1,
            ModelKind::Rf => 2,
            ModelKind::Dt => 3,
            ModelKind::Gb => 4,
            ModelKind::Knn => 5,
            ModelKind::Mlp => 6,
            ModelKind::Sgd => 7,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SVR" => Ok(ModelKind::Svr),
            "RF" => Ok(ModelKind::Rf),
            "DT" => Ok(ModelKind::Dt),
            "GB" => Ok(ModelKind::Gb),
            "KNN" | "K-NN" => Ok(ModelKind::Knn),
            "MLP" | "NN" => Ok(ModelKind::Mlp),
            "SGD" => Ok(ModelKind::Sgd),
            _ => Err(ModelError::UnknownKind(s.to_string())),
        }
    }
}

/// A hyperparameter value: numbers for everything numeric, text for choices
/// such as the kernel or activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Num(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyperparams: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl ModelSpec {
    /// The tuned defaults for `kind`.
    pub fn default_for(kind: ModelKind) -> Self {
        let pairs: Vec<(&str, ParamValue)> = match kind {
            ModelKind::Svr => vec![
                ("kernel", "rbf".into()),
                ("C", 10.0.into()),
                ("epsilon", 0.1.into()),
                ("gamma", "scale".into()),
                ("tol", 1e-3.into()),
                ("max_iter", 1_000_000.0.into()),
            ],
            ModelKind::Rf => vec![
                ("n_estimators", 500.0.into()),
                ("random_state", 0.0.into()),
                ("max_features", 3.0.into()),
                ("min_samples_split", 2.0.into()),
                ("min_samples_leaf", 1.0.into()),
                ("max_depth", 0.0.into()),
                ("bootstrap", 1.0.into()),
            ],
            ModelKind::Dt => vec![
                ("random_state", 0.0.into()),
                ("min_samples_split", 9.0.into()),
                ("min_samples_leaf", 1.0.into()),
                ("max_depth", 0.0.into()),
            ],
            ModelKind::Gb => vec![
                ("learning_rate", 0.01.into()),
                ("n_estimators", 500.0.into()),
                ("max_depth", 3.0.into()),
                ("min_samples_split", 2.0.into()),
                ("min_samples_leaf", 1.0.into()),
            ],
            ModelKind::Knn => vec![("k", 10.0.into()), ("weights", "uniform".into())],
            ModelKind::Mlp => vec![
                ("learning_rate", 0.001.into()),
                ("activation", "relu".into()),
                ("hidden_units", 20.0.into()),
                ("max_epochs", 500.0.into()),
                ("batch_size", 32.0.into()),
                ("alpha", 1e-4.into()),
                ("tol", 1e-6.into()),
                ("n_iter_no_change", 10.0.into()),
            ],
            ModelKind::Sgd => vec![
                ("max_epochs", 1000.0.into()),
                ("tol", 1e-3.into()),
                ("eta0", 0.01.into()),
                ("power_t", 0.25.into()),
                ("alpha", 1e-4.into()),
                ("n_iter_no_change", 5.0.into()),
            ],
        };
        Self {
            kind,
            hyperparams: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            seed: 0,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<ParamValue>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Overrides defaults; unknown keys are rejected.
    pub fn apply(mut self, overrides: &BTreeMap<String, ParamValue>) -> Result<Self, ModelError> {
        let known = Self::default_for(self.kind);
        for (k, v) in overrides {
            if !known.hyperparams.contains_key(k) {
                return Err(ModelError::UnknownParam {
                    kind: self.kind,
                    key: k.clone(),
                });
            }
            self.hyperparams.insert(k.clone(), v.clone());
        }
        Ok(self)
    }

    fn raw(&self, key: &str) -> Result<&ParamValue, ModelError> {
        self.hyperparams
            .get(key)
            .ok_or_else(|| ModelError::MissingParam(key.to_string()))
    }

    pub fn num(&self, key: &str) -> Result<f64, ModelError> {
        match self.raw(key)? {
            ParamValue::Num(v) if v.is_finite() => Ok(*v),
            other => Err(ModelError::BadParam {
                key: key.to_string(),
                value: other.to_string(),
            }),
        }
    }

    /// A non-negative integer parameter.
    pub fn count(&self, key: &str) -> Result<usize, ModelError> {
        let v = self.num(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(ModelError::BadParam {
                key: key.to_string(),
                value: v.to_string(),
            });
        }
        Ok(v as usize)
    }

    pub fn text(&self, key: &str) -> Result<String, ModelError> {
        match self.raw(key)? {
            ParamValue::Text(s) => Ok(s.to_ascii_lowercase()),
            ParamValue::Num(v) => Ok(v.to_string()),
        }
    }

    /// Short `key=value;...` label used in score tables.
    pub fn label(&self) -> String {
        self.hyperparams
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("{kind} has no hyperparameter `{key}`")]
    UnknownParam { kind: ModelKind, key: String },
    #[error("missing hyperparameter `{0}`")]
    MissingParam(String),
    #[error("invalid value `{value}` for hyperparameter `{key}`")]
    BadParam { key: String, value: String },
    #[error("need at least {needed} training samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("labels and rows disagree: {rows} rows, {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Learned state, one variant per kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Svr(Svr),
    Forest(Forest),
    Tree(RegressionTree),
    Boosted(BoostedTrees),
    Knn(Knn),
    Mlp(Mlp),
    Linear(LinearModel),
}

impl ModelParams {
    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            ModelParams::Svr(m) => m.predict_row(row),
            ModelParams::Forest(m) => m.predict_row(row),
            ModelParams::Tree(m) => m.predict_row(row),
            ModelParams::Boosted(m) => m.predict_row(row),
            ModelParams::Knn(m) => m.predict_row(row),
            ModelParams::Mlp(m) => m.predict_row(row),
            ModelParams::Linear(m) => m.predict_row(row),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitMetadata {
    pub n_train: usize,
    pub feature_count: usize,
    /// Wall time of the fit. Runtime information only; not persisted.
    pub training_wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub meta: FitMetadata,
    /// False when an iteration cap stopped the solver before its tolerance was met.
    pub converged: bool,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        predict(self, x)
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != self.meta.feature_count {
            return Err(ModelError::DimensionMismatch {
                expected: self.meta.feature_count,
                got: row.len(),
            });
        }
        Ok(self.params.predict_row(row))
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fits `spec` on standardized features `x` and labels `y`.
pub fn fit_model(spec: &ModelSpec, x: &Matrix, y: &[f64]) -> Result<TrainedModel, ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::LabelCount {
            rows: x.rows(),
            labels: y.len(),
        });
    }
    if x.rows() < 2 {
        return Err(ModelError::TooFewSamples {
            needed: 2,
            got: x.rows(),
        });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    let start = Instant::now();
    let (params, converged) = match spec.kind {
        ModelKind::Svr => {
            let (m, ok) = Svr::fit(&SvrParams::from_spec(spec)?, x, y);
            (ModelParams::Svr(m), ok)
        }
        ModelKind::Rf => (
            ModelParams::Forest(Forest::fit(&ForestParams::from_spec(spec)?, x, y)),
            true,
        ),
        ModelKind::Dt => {
            let cfg = forest::dt_config(spec)?;
            let samples = (0..x.rows()).collect();
            (
                ModelParams::Tree(RegressionTree::fit(x, y, samples, &cfg, None)),
                true,
            )
        }
        ModelKind::Gb => (
            ModelParams::Boosted(BoostedTrees::fit(&BoostParams::from_spec(spec)?, x, y)),
            true,
        ),
        ModelKind::Knn => (
            ModelParams::Knn(Knn::fit(&KnnParams::from_spec(spec)?, x, y)?),
            true,
        ),
        ModelKind::Mlp => {
            let (m, ok) = Mlp::fit(&MlpParams::from_spec(spec)?, x, y, spec.seed);
            (ModelParams::Mlp(m), ok)
        }
        ModelKind::Sgd => {
            let (m, ok) = LinearModel::fit_sgd(&SgdParams::from_spec(spec)?, x, y, spec.seed);
            (ModelParams::Linear(m), ok)
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        params,
        meta: FitMetadata {
            n_train: x.rows(),
            feature_count: x.cols(),
            training_wall_time_s: start.elapsed().as_secs_f64(),
        },
        converged,
    })
}

/// Predicts one value per row of `x`.
pub fn predict(m: &TrainedModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    if x.cols() != m.meta.feature_count {
        return Err(ModelError::DimensionMismatch {
            expected: m.meta.feature_count,
            got: x.cols(),
        });
    }
    Ok(x.iter_rows().map(|r| m.params.predict_row(r)).collect())
}
