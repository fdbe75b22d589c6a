use serde::{Deserialize, Serialize};

use super::manifest::VideoManifest;

/// The six adaptation policies. Throughput-driven kinds start every session
/// at the lowest layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbrKind {
    /// Highest bitrate below `safety` times the harmonic mean of the last
    /// `window` segment throughputs.
    RateBased { safety: f64, window: usize },
    /// Linear map from buffer level to bitrate between the reservoir and
    /// the top of the cushion.
    BufferBased { reservoir_s: f64, cushion_s: f64 },
    /// Rate estimate scaled by `clamp(buffer / target_buffer_s, 0.5, 1.5)`.
    Hybrid {
        safety: f64,
        window: usize,
        target_buffer_s: f64,
    },
    /// Rate based with a low safety factor and at most one layer up per segment.
    ConservativeRate { safety: f64, window: usize },
    /// Rate based on the last throughput alone, with a safety factor above 1.
    AggressiveRate { safety: f64 },
    /// Reads the true current bandwidth but never exceeds `cap_kbps`.
    OracleCapped { safety: f64, cap_kbps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrPolicy {
    pub policy_id: String,
    #[serde(flatten)]
    pub kind: AbrKind,
}

/// What a policy may observe when choosing the next segment's layer.
#[derive(Debug, Clone, Copy)]
pub struct AbrContext<'a> {
    /// Measured kbps of each completed download, oldest first.
    pub throughput_kbps: &'a [f64],
    pub buffer_s: f64,
    pub last_layer: Option<usize>,
    /// Effective bandwidth right now (used only by the oracle policy).
    pub current_bandwidth_kbps: f64,
}

fn harmonic_mean(v: &[f64]) -> f64 {
    if v.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    v.len() as f64 / v.iter().map(|x| 1.0 / x).sum::<f64>()
}

fn recent(v: &[f64], window: usize) -> &[f64] {
    &v[v.len().saturating_sub(window.max(1))..]
}

impl AbrPolicy {
    pub fn new(policy_id: &str, kind: AbrKind) -> Self {
        Self {
            policy_id: policy_id.to_string(),
            kind,
        }
    }

    /// One policy of each kind with the default parameters.
    pub fn default_set() -> Vec<AbrPolicy> {
        vec![
            Self::new("rate_based", AbrKind::RateBased { safety: 0.9, window: 3 }),
            Self::new(
                "buffer_based",
                AbrKind::BufferBased {
                    reservoir_s: 5.0,
                    cushion_s: 15.0,
                },
            ),
            Self::new(
                "hybrid",
                AbrKind::Hybrid {
                    safety: 0.9,
                    window: 3,
                    target_buffer_s: 10.0,
                },
            ),
            Self::new(
                "conservative_rate",
                AbrKind::ConservativeRate { safety: 0.6, window: 5 },
            ),
            Self::new("aggressive_rate", AbrKind::AggressiveRate { safety: 1.15 }),
            Self::new(
                "oracle_capped",
                AbrKind::OracleCapped {
                    safety: 0.95,
                    cap_kbps: 3000.0,
                },
            ),
        ]
    }

    /// Layer index for the next segment, always within the manifest.
    pub fn choose(&self, m: &VideoManifest, ctx: &AbrContext) -> usize {
        let history = ctx.throughput_kbps;
        match self.kind {
            AbrKind::RateBased { safety, window } => {
                if history.is_empty() {
                    return 0;
                }
                m.highest_within(safety * harmonic_mean(recent(history, window)))
            }
            AbrKind::BufferBased {
                reservoir_s,
                cushion_s,
            } => {
                let lo = m.representations[0].bitrate_kbps;
                let hi = m.top().bitrate_kbps;
                if ctx.buffer_s <= reservoir_s {
                    0
                } else if ctx.buffer_s >= reservoir_s + cushion_s {
                    m.representations.len() - 1
                } else {
                    let frac = (ctx.buffer_s - reservoir_s) / cushion_s;
                    m.highest_within(lo + frac * (hi - lo))
                }
            }
            AbrKind::Hybrid {
                safety,
                window,
                target_buffer_s,
            } => {
                if history.is_empty() {
                    return 0;
                }
                let factor = (ctx.buffer_s / target_buffer_s).clamp(0.5, 1.5);
                m.highest_within(factor * safety * harmonic_mean(recent(history, window)))
            }
            AbrKind::ConservativeRate { safety, window } => {
                if history.is_empty() {
                    return 0;
                }
                let pick = m.highest_within(safety * harmonic_mean(recent(history, window)));
                match ctx.last_layer {
                    Some(last) => pick.min(last + 1),
                    None => pick,
                }
            }
            AbrKind::AggressiveRate { safety } => match history.last() {
                None => 0,
                Some(&t) => m.highest_within(safety * t),
            },
            AbrKind::OracleCapped { safety, cap_kbps } => {
                m.highest_within((safety * ctx.current_bandwidth_kbps).min(cap_kbps))
            }
        }
    }
}
