//! QoE prediction for HTTP adaptive streaming.
//!
//! The crate covers the whole supervised-learning pipeline (session ingestion,
//! feature engineering, seven regressors, cross-validated evaluation and the
//! comparative experiments) together with a deterministic ABR/buffer simulator
//! and a simulated QoE-aware monitoring and bandwidth-allocation loop.

pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod matrix;
pub mod models;
pub mod pipeline;
pub mod session;
pub mod synth;

pub use features::{extract_features, fit_scaler, FeatureVector, Scaler, VqiConfig};
pub use matrix::Matrix;
pub use session::{LabeledSession, Segment, StallEvent, StreamingSession};
pub use models::{fit_model, predict, ModelKind, ModelSpec, TrainedModel};
