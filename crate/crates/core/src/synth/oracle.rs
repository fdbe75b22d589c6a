//! Synthetic ground-truth QoE.
//!
//! `base = w0 + w1 * (vqi - 1) / 4 - w2 * f5 - w3 * ln(1 + f2) - w4 * min(1, f1 / loading_norm_s)`,
//! clamped to [0, 1], plus optional seeded Gaussian noise and a second clamp.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::features::{extract_features, FeatureVector, VqiConfig};
use crate::models::stream_rng;
use crate::session::StreamingSession;

const NOISE_STREAM: u64 = 31;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleWeights {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub loading_norm_s: f64,
}

impl Default for OracleWeights {
    fn default() -> Self {
        Self {
            w0: 0.15,
            w1: 0.8,
            w2: 1.0,
            w3: 0.25,
            w4: 0.3,
            loading_norm_s: 10.0,
        }
    }
}

/// Range of `c * v` for `v` in `[0, hi]`.
fn span(c: f64, hi: f64) -> (f64, f64) {
    let a = if c == 0.0 { 0.0 } else { c * hi };
    (a.min(0.0), a.max(0.0))
}

impl OracleWeights {
    /// Rejects weights whose unclamped score can never land in [0, 1].
    pub fn validate(&self) -> Result<(), SynthError> {
        let all = [self.w0, self.w1, self.w2, self.w3, self.w4, self.loading_norm_s];
        if all.iter().any(|w| !w.is_finite()) || self.loading_norm_s <= 0.0 {
            return Err(SynthError::InvalidConfig(
                "oracle weights must be finite and loading_norm_s positive".into(),
            ));
        }
        let inf = f64::INFINITY;
        let terms = [
            span(self.w1, 1.0),
            span(-self.w2, inf),
            span(-self.w3, inf),
            span(-self.w4, 1.0),
        ];
        let lo = self.w0 + terms.iter().map(|t| t.0).sum::<f64>();
        let hi = self.w0 + terms.iter().map(|t| t.1).sum::<f64>();
        if hi < 0.0 || lo > 1.0 {
            return Err(SynthError::InvalidConfig(format!(
                "oracle score range [{lo}, {hi}] never meets [0, 1]"
            )));
        }
        Ok(())
    }

    /// Unclamped score of a feature vector.
    pub fn raw_score(&self, f: &FeatureVector) -> f64 {
        self.w0 + self.w1 * (f.f10_visual_quality_index - 1.0) / 4.0
            - self.w2 * f.f5_stall_ratio
            - self.w3 * f.f2_stall_count.ln_1p()
            - self.w4 * (f.f1_initial_loading_s / self.loading_norm_s).min(1.0)
    }
}

/// Normalized label for `s`; deterministic per `seed`.
pub fn oracle_qoe(
    s: &StreamingSession,
    w: &OracleWeights,
    vqi: &VqiConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<f64, SynthError> {
    w.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SynthError::InvalidConfig(format!(
            "noise_sigma {noise_sigma} must be finite and non-negative"
        )));
    }
    let base = w.raw_score(&extract_features(s, vqi)).clamp(0.0, 1.0);
    if noise_sigma == 0.0 {
        return Ok(base);
    }
    let noise = Normal::new(0.0, noise_sigma)
        .expect("valid sigma")
        .sample(&mut stream_rng(seed, NOISE_STREAM));
    Ok((base + noise).clamp(0.0, 1.0))
}
