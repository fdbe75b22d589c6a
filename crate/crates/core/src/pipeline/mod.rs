//! Closed-loop monitoring and control over simulated sessions.
//!
//! Probe messages travel through a collector with a fixed delivery latency,
//! the feature monitor turns each delivered message into features and a
//! predicted QoE, and at every allocation epoch the resource manager splits
//! the link capacity into per-session bandwidth caps. Everything runs on one
//! simulated clock.

mod allocator;
mod closed_loop;
mod kqi;
mod monitor;

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::models::ModelError;
use crate::synth::SynthError;

pub use allocator::{
    allocate_resources, equal_split, probe_features, AllocationDecision, AllocationPolicy, AllocatorConfig,
    SessionShare, SessionState,
};
pub use closed_loop::{
    run_closed_loop, EpochRecord, LoopConfig, RunReport, Scenario, ScenarioSession, SessionResult,
};
pub use kqi::{emission_times, parse_wire, probe_emit, session_snapshot, write_wire, KqiMessage};
pub use monitor::{aggregate_window, predict_live, replay, FeatureMonitor, PredictionRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid monitoring configuration: {0}")]
    InvalidConfig(String),
    #[error("wire line {line}: {reason}")]
    Wire { line: usize, reason: String },
    #[error("empty message window")]
    EmptyWindow,
    #[error("invalid message window: {0}")]
    InvalidWindow(String),
    #[error("scaler has {got} columns, features have {expected}")]
    ScalerWidth { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("link capacity must be positive and finite, got {0}")]
    Capacity(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Collector path: through the service provider's database (IFO1) or through
/// an edge server at the radio access network (IFO2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowOption {
    Ifo1,
    Ifo2,
}

impl FromStr for FlowOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "ifo1" => Ok(Self::Ifo1),
            "2" | "ifo2" => Ok(Self::Ifo2),
            other => Err(format!("unknown flow option `{other}` (expected 1 or 2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitoringConfig {
    pub frequency_hz: f64,
    pub flow_option: FlowOption,
    pub ifo1_latency_s: f64,
    pub ifo2_latency_s: f64,
}

impl Default for MonitoringConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 0.25,
            flow_option: FlowOption::Ifo1,
            ifo1_latency_s: 2.0,
            ifo2_latency_s: 0.05,
        }
    }
}

impl MonitoringConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!(
                "frequency_hz must be positive, got {}",
                self.frequency_hz
            )));
        }
        for l in [self.ifo1_latency_s, self.ifo2_latency_s] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(PipelineError::InvalidConfig(format!(
                    "collector latency must be finite and non-negative, got {l}"
                )));
            }
        }
        Ok(())
    }

    /// Delivery delay of the configured collector path.
    pub fn latency_s(&self) -> f64 {
        match self.flow_option {
            FlowOption::Ifo1 => self.ifo1_latency_s,
            FlowOption::Ifo2 => self.ifo2_latency_s,
        }
    }
}
