//! Labeled session generator: ABR clients over bandwidth traces, scored by a
//! synthetic QoE oracle.

mod abr;
mod dataset;
mod manifest;
mod oracle;
mod player;
mod trace;

use thiserror::Error;

use crate::session::Violation;

pub use abr::{AbrContext, AbrKind, AbrPolicy};
pub use dataset::{generate_dataset, SynthConfig};
pub use manifest::{Representation, VideoManifest};
pub use oracle::{oracle_qoe, OracleWeights};
pub use player::{simulate_outcome, simulate_session, PlaybackSnapshot, Player, PlayerConfig, SimOutcome};
pub use trace::{trace_library, BandwidthTrace};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("session {session_id}: exceeded max wall time of {limit_s} s (bandwidth never recovers)")]
    MaxWallTime { session_id: String, limit_s: f64 },
    #[error("session {session_id}: simulated session failed validation: {violations:?}")]
    InvalidSession {
        session_id: String,
        violations: Vec<Violation>,
    },
    #[error("cell ({policy}, {trace}, replicate {replicate}): {reason}")]
    Cell {
        policy: String,
        trace: String,
        replicate: u32,
        reason: String,
    },
    #[error("{} cell(s) failed:\n{}", .0.len(), .0.join("\n"))]
    Cells(Vec<String>),
}
