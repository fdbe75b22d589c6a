use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SynthError;

/// Step-constant bandwidth over wall time; the last sample holds forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    pub trace_id: String,
    /// `(time_s, kbps)` pairs, times strictly increasing from 0.
    pub samples: Vec<(f64, f64)>,
}

macro_rules! library_file {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../traces/", $name, ".json"))
    };
}

const LIBRARY: [&str; 13] = [
    library_file!("constant_low"),
    library_file!("constant_mid"),
    library_file!("constant_high"),
    library_file!("step_up"),
    library_file!("step_down"),
    library_file!("periodic_dip"),
    library_file!("ramp_up"),
    library_file!("ramp_down"),
    library_file!("sawtooth"),
    library_file!("outage"),
    library_file!("volatile"),
    library_file!("mobile_walk"),
    library_file!("congested_evening"),
];

/// The 13 network conditions shipped in `traces/`.
pub fn trace_library() -> Vec<BandwidthTrace> {
    LIBRARY
        .iter()
        .map(|s| BandwidthTrace::from_json(s).expect("bundled trace is valid"))
        .collect()
}

impl BandwidthTrace {
    pub fn constant(trace_id: &str, kbps: f64) -> Self {
        Self {
            trace_id: trace_id.to_string(),
            samples: vec![(0.0, kbps)],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |why: &str| Err(SynthError::InvalidTrace(format!("{}: {why}", self.trace_id)));
        match self.samples.first() {
            None => return bad("no samples"),
            Some(&(t, _)) if t != 0.0 => return bad("first sample must be at time 0"),
            _ => {}
        }
        for w in self.samples.windows(2) {
            if !(w[1].0 > w[0].0) || !w[1].0.is_finite() {
                return bad("sample times must be strictly increasing");
            }
        }
        if self.samples.iter().any(|&(_, b)| !(b >= 0.0 && b.is_finite())) {
            return bad("bandwidth must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let t: Self =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidTrace(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthError::InvalidTrace(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Bandwidth in effect at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        let i = self.samples.partition_point(|&(s, _)| s <= t);
        self.samples[i.saturating_sub(1)].1
    }

    /// First sample time strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let i = self.samples.partition_point(|&(s, _)| s <= t);
        self.samples.get(i).map(|&(s, _)| s)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            trace_id: self.trace_id.clone(),
            samples: self.samples.iter().map(|&(t, b)| (t, b * factor)).collect(),
        }
    }

    pub fn capped(&self, cap_kbps: f64) -> Self {
        Self {
            trace_id: self.trace_id.clone(),
            samples: self.samples.iter().map(|&(t, b)| (t, b.min(cap_kbps))).collect(),
        }
    }

    /// Kilobits deliverable over `[a, b]`.
    pub fn integral_kbits(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut t = a;
        while t < b {
            let end = self.next_change_after(t).map_or(b, |c| c.min(b));
            total += self.rate_at(t) * (end - t);
            t = end;
        }
        total
    }
}
